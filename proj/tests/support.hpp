#pragma once

// Test-only helpers: scratch directories, random word sequences, and
// reference computations that do not share code with the library.

#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace fasa_test {

using Words = std::vector<std::string>;

class TempDir {
public:
    TempDir() {
        std::string tmpl = (std::filesystem::temp_directory_path() / "fasa_test_XXXXXX").string();
        if (::mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
        path_ = tmpl;
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Levenshtein distance straight from the recursive definition, memoized.
inline std::size_t oracle_dis(const Words& x, const Words& y) {
    const std::size_t n = x.size();
    const std::size_t k = y.size();
    std::vector<std::vector<std::size_t>> memo(n + 1, std::vector<std::size_t>(k + 1, SIZE_MAX));
    std::function<std::size_t(std::size_t, std::size_t)> d = [&](std::size_t i, std::size_t j) -> std::size_t {
        if (i == 0) return j;
        if (j == 0) return i;
        auto& slot = memo[i][j];
        if (slot != SIZE_MAX) return slot;
        const std::size_t del = d(i - 1, j) + 1;
        const std::size_t ins = d(i, j - 1) + 1;
        const std::size_t sub = d(i - 1, j - 1) + (x[i - 1] == y[j - 1] ? 0 : 1);
        slot = std::min(del, std::min(ins, sub));
        return slot;
    };
    return d(n, k);
}

struct OracleWindow {
    std::size_t start = 0; // 1-based
    std::size_t len = 0;
    std::size_t dist = SIZE_MAX;
    std::size_t candidates = 0;
};

// Enumerates windows of length lo..hi at every anchor, first strict minimum.
inline OracleWindow oracle_best_window(const Words& pred, const Words& t, std::size_t lo, std::size_t hi) {
    OracleWindow best;
    for (std::size_t a = 0; a < t.size(); ++a) {
        for (std::size_t w = lo; w <= hi && a + w <= t.size(); ++w) {
            ++best.candidates;
            const Words window(t.begin() + static_cast<long>(a), t.begin() + static_cast<long>(a + w));
            const std::size_t d = oracle_dis(pred, window);
            if (d < best.dist) best = {a + 1, w, d, best.candidates};
        }
    }
    return best;
}

inline Words random_words(std::mt19937_64& rng, std::size_t len, std::size_t vocab) {
    Words out;
    out.reserve(len);
    for (std::size_t k = 0; k < len; ++k) out.push_back("w" + std::to_string(rng() % vocab));
    return out;
}

struct CommandOutput {
    int exit_code = -1;
    std::string out;
};

// Runs a shell command, capturing stdout (stderr goes to the test log).
inline CommandOutput run(const std::string& command) {
    CommandOutput result;
    FILE* pipe = ::popen(command.c_str(), "r");
    if (!pipe) return result;
    char buf[4096];
    std::size_t n = 0;
    while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) result.out.append(buf, n);
    const int status = ::pclose(pipe);
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

inline std::string quote(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

// A background process whose stdout can be read line by line.
class Child {
public:
    explicit Child(const std::vector<std::string>& argv) {
        int fds[2];
        if (::pipe(fds) != 0) throw std::runtime_error("pipe failed");
        posix_spawn_file_actions_t actions;
        posix_spawn_file_actions_init(&actions);
        posix_spawn_file_actions_adddup2(&actions, fds[1], 1);
        posix_spawn_file_actions_addclose(&actions, fds[0]);
        posix_spawn_file_actions_addclose(&actions, fds[1]);
        std::vector<char*> args;
        for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
        args.push_back(nullptr);
        const int rc = ::posix_spawn(&pid_, args[0], &actions, nullptr, args.data(), environ);
        posix_spawn_file_actions_destroy(&actions);
        ::close(fds[1]);
        out_ = fds[0];
        if (rc != 0) throw std::runtime_error("spawn failed");
    }
    Child(const Child&) = delete;
    Child& operator=(const Child&) = delete;
    ~Child() {
        if (pid_ > 0) {
            ::kill(pid_, SIGKILL);
            wait();
        }
        ::close(out_);
    }

    // Next stdout line, or "" after `timeout` or EOF.
    std::string read_line(std::chrono::milliseconds timeout = std::chrono::seconds(10)) {
        const auto deadline = std::chrono::steady_clock::now() + timeout;
        for (;;) {
            if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
                auto line = buffer_.substr(0, nl);
                buffer_.erase(0, nl + 1);
                return line;
            }
            const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
            if (left.count() <= 0) return {};
            pollfd p{out_, POLLIN, 0};
            if (::poll(&p, 1, static_cast<int>(left.count())) <= 0) return {};
            char buf[512];
            const auto n = ::read(out_, buf, sizeof buf);
            if (n <= 0) return {};
            buffer_.append(buf, static_cast<std::size_t>(n));
        }
    }

    void signal(int sig) { ::kill(pid_, sig); }

    // Exit status, or -1 when killed by a signal.
    int wait() {
        int status = 0;
        ::waitpid(pid_, &status, 0);
        pid_ = -1;
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }

private:
    pid_t pid_ = -1;
    int out_ = -1;
    std::string buffer_;
};

// Port from a "listening on http://host:port/ ..." line.
inline int port_of(const std::string& line) {
    const auto slash = line.find('/', line.find("//") + 2);
    const auto colon = line.rfind(':', slash);
    if (colon == std::string::npos || slash == std::string::npos) return -1;
    return std::stoi(line.substr(colon + 1, slash - colon - 1));
}

} // namespace fasa_test
