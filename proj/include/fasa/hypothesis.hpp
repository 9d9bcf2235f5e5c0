#pragma once

// ASR predictions per utterance.
//
// The recognizer itself lives outside this toolkit. Predictions arrive as a
// JSON interchange document, either read from disk or captured from the
// standard output of an external command:
//
//   { "asr_id": "...",
//     "segments": [ { "id": "u1", "audio": "a.wav", "start_s": 0.0, "end_s": 2.5,
//                     "text": "The dog ran.",
//                     "words": [ {"w": "The", "start_s": 0.0, "end_s": 0.3}, ... ] } ] }
//
// "words" is optional and only carried through; alignment uses whole segments.

#include <poll.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "fasa/errors.hpp"
#include "fasa/transcript.hpp"

extern char** environ;

namespace fasa {

struct WordTiming {
    std::string w;
    double start_s = 0.0;
    double end_s = 0.0;

    friend bool operator==(const WordTiming&, const WordTiming&) = default;
};

struct Utterance {
    std::string id;
    std::string audio_path;
    double start_s = 0.0;
    double end_s = 0.0;
    WordSeq pred_words;
    std::string pred_text_raw;
    std::optional<std::vector<WordTiming>> word_timings;

    double duration() const noexcept { return end_s - start_s; }

    friend bool operator==(const Utterance&, const Utterance&) = default;
};

struct HypothesisSet {
    std::vector<Utterance> utterances;
    std::string asr_id;

    friend bool operator==(const HypothesisSet&, const HypothesisSet&) = default;
};

struct HypothesisLimits {
    double max_segment_s = 30.0;
    double overlap_tol_s = 0.1;
};

// Checks the set-level invariants: unique ids, per-file ordering by start
// time, bounded overlap between neighbours, bounded segment length.
inline void validate(const HypothesisSet& hs, const HypothesisLimits& limits = {}) {
    std::set<std::string> ids;
    std::map<std::string, const Utterance*> last_in_file;
    for (const auto& u : hs.utterances) {
        if (!ids.insert(u.id).second) throw IdCollision("duplicate utterance id '" + u.id + "'");
        if (!(u.start_s >= 0.0)) throw SchemaError("utterance '" + u.id + "': negative start_s");
        if (!(u.end_s > u.start_s)) throw SchemaError("utterance '" + u.id + "': end_s must exceed start_s");
        if (u.duration() > limits.max_segment_s) {
            throw SchemaError("utterance '" + u.id + "': longer than " + std::to_string(limits.max_segment_s) + " s");
        }
        auto& prev = last_in_file[u.audio_path];
        if (prev != nullptr) {
            if (u.start_s < prev->start_s) {
                throw SchemaError("utterance '" + u.id + "': segments of " + u.audio_path + " not sorted by start_s");
            }
            if (prev->end_s - u.start_s > limits.overlap_tol_s) {
                throw SchemaError("utterance '" + u.id + "' overlaps '" + prev->id + "'");
            }
        }
        prev = &u;
    }
}

namespace detail {

template <typename T>
T require(const nlohmann::json& obj, const char* key, const std::string& where) {
    const auto it = obj.find(key);
    if (it == obj.end()) throw SchemaError(where + ": missing field \"" + key + "\"");
    try {
        return it->get<T>();
    } catch (const nlohmann::json::exception&) {
        throw SchemaError(where + ": field \"" + key + "\" has the wrong type");
    }
}

} // namespace detail

inline HypothesisSet parse_hypotheses(std::string_view document, const std::string& source = "<hypotheses>",
                                      const HypothesisLimits& limits = {}) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(document);
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError(source + ": invalid JSON: " + e.what());
    }
    if (!doc.is_object()) throw SchemaError(source + ": top level must be an object");

    HypothesisSet hs;
    hs.asr_id = detail::require<std::string>(doc, "asr_id", source);
    const auto segs = doc.find("segments");
    if (segs == doc.end() || !segs->is_array()) throw SchemaError(source + ": \"segments\" must be an array");

    std::size_t index = 0;
    for (const auto& seg : *segs) {
        const std::string where = source + ": segments[" + std::to_string(index++) + "]";
        if (!seg.is_object()) throw SchemaError(where + ": not an object");
        Utterance u;
        u.id = detail::require<std::string>(seg, "id", where);
        u.audio_path = detail::require<std::string>(seg, "audio", where);
        u.start_s = detail::require<double>(seg, "start_s", where);
        u.end_s = detail::require<double>(seg, "end_s", where);
        u.pred_text_raw = detail::require<std::string>(seg, "text", where);
        u.pred_words = clean_words(u.pred_text_raw);
        if (const auto w = seg.find("words"); w != seg.end()) {
            if (!w->is_array()) throw SchemaError(where + ": \"words\" must be an array");
            std::vector<WordTiming> timings;
            for (const auto& wt : *w) {
                if (!wt.is_object()) throw SchemaError(where + ": word entry is not an object");
                timings.push_back({detail::require<std::string>(wt, "w", where),
                                   detail::require<double>(wt, "start_s", where),
                                   detail::require<double>(wt, "end_s", where)});
            }
            u.word_timings = std::move(timings);
        }
        hs.utterances.push_back(std::move(u));
    }
    validate(hs, limits);
    return hs;
}

inline HypothesisSet load_hypotheses(const std::filesystem::path& path, const HypothesisLimits& limits = {}) {
    return parse_hypotheses(read_file(path), path.string(), limits);
}

inline nlohmann::json to_json(const HypothesisSet& hs) {
    nlohmann::json segs = nlohmann::json::array();
    for (const auto& u : hs.utterances) {
        nlohmann::json seg = {{"id", u.id},           {"audio", u.audio_path}, {"start_s", u.start_s},
                              {"end_s", u.end_s},     {"text", u.pred_text_raw}};
        if (u.word_timings) {
            nlohmann::json words = nlohmann::json::array();
            for (const auto& wt : *u.word_timings) {
                words.push_back({{"w", wt.w}, {"start_s", wt.start_s}, {"end_s", wt.end_s}});
            }
            seg["words"] = std::move(words);
        }
        segs.push_back(std::move(seg));
    }
    return {{"asr_id", hs.asr_id}, {"segments", std::move(segs)}};
}

inline std::string emit_hypotheses(const HypothesisSet& hs) { return to_json(hs).dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// External command

namespace detail {

inline std::string shell_quote(std::string_view s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') out += "'\\''";
        else out.push_back(c);
    }
    out.push_back('\'');
    return out;
}

struct CommandResult {
    int exit_code = 0;
    std::string out;
    std::string err;
};

// Runs `command` through /bin/sh, capturing stdout and stderr.
inline CommandResult run_shell(const std::string& command) {
    std::array<int, 2> out_pipe{};
    std::array<int, 2> err_pipe{};
    if (::pipe(out_pipe.data()) != 0) throw SpawnError(std::string("pipe: ") + std::strerror(errno));
    if (::pipe(err_pipe.data()) != 0) {
        ::close(out_pipe[0]);
        ::close(out_pipe[1]);
        throw SpawnError(std::string("pipe: ") + std::strerror(errno));
    }

    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_addclose(&actions, out_pipe[0]);
    posix_spawn_file_actions_addclose(&actions, err_pipe[0]);
    posix_spawn_file_actions_adddup2(&actions, out_pipe[1], STDOUT_FILENO);
    posix_spawn_file_actions_adddup2(&actions, err_pipe[1], STDERR_FILENO);
    posix_spawn_file_actions_addclose(&actions, out_pipe[1]);
    posix_spawn_file_actions_addclose(&actions, err_pipe[1]);

    std::string sh = "/bin/sh";
    std::string dash_c = "-c";
    std::string cmd = command;
    char* argv[] = {sh.data(), dash_c.data(), cmd.data(), nullptr};
    pid_t pid = 0;
    const int rc = posix_spawn(&pid, "/bin/sh", &actions, nullptr, argv, environ);
    posix_spawn_file_actions_destroy(&actions);
    ::close(out_pipe[1]);
    ::close(err_pipe[1]);
    if (rc != 0) {
        ::close(out_pipe[0]);
        ::close(err_pipe[0]);
        throw SpawnError("cannot spawn /bin/sh: " + std::string(std::strerror(rc)));
    }

    CommandResult result;
    std::array<pollfd, 2> fds{{{out_pipe[0], POLLIN, 0}, {err_pipe[0], POLLIN, 0}}};
    std::array<std::string*, 2> sinks{&result.out, &result.err};
    int open_fds = 2;
    char buf[4096];
    while (open_fds > 0) {
        if (::poll(fds.data(), fds.size(), -1) < 0) {
            if (errno == EINTR) continue;
            break;
        }
        for (std::size_t k = 0; k < fds.size(); ++k) {
            if (fds[k].fd < 0 || fds[k].revents == 0) continue;
            const auto n = ::read(fds[k].fd, buf, sizeof buf);
            if (n > 0) {
                sinks[k]->append(buf, static_cast<std::size_t>(n));
            } else if (n == 0 || errno != EINTR) {
                ::close(fds[k].fd);
                fds[k].fd = -1;
                --open_fds;
            }
        }
    }
    for (auto& f : fds) {
        if (f.fd >= 0) ::close(f.fd);
    }

    int status = 0;
    while (::waitpid(pid, &status, 0) < 0) {
        if (errno != EINTR) throw SpawnError(std::string("waitpid: ") + std::strerror(errno));
    }
    if (WIFEXITED(status)) result.exit_code = WEXITSTATUS(status);
    else if (WIFSIGNALED(status)) result.exit_code = 128 + WTERMSIG(status);
    // sh reports exec failure of its child as 127.
    return result;
}

} // namespace detail

inline std::string substitute_audio(std::string_view command_template, const std::filesystem::path& audio_path) {
    const std::string placeholder = "{audio}";
    std::string out;
    std::size_t pos = 0;
    bool found = false;
    while (true) {
        const auto hit = command_template.find(placeholder, pos);
        if (hit == std::string_view::npos) break;
        found = true;
        out.append(command_template.substr(pos, hit - pos));
        out.append(detail::shell_quote(audio_path.string()));
        pos = hit + placeholder.size();
    }
    if (!found) throw ConfigError("ASR command template lacks the {audio} placeholder");
    out.append(command_template.substr(pos));
    return out;
}

inline HypothesisSet run_external_asr(const std::filesystem::path& audio_path, std::string_view command_template,
                                      const HypothesisLimits& limits = {}) {
    const auto command = substitute_audio(command_template, audio_path);
    const auto result = detail::run_shell(command);
    if (result.exit_code == 127 && result.out.empty()) {
        throw SpawnError("command not runnable: " + result.err.substr(0, 200));
    }
    if (result.exit_code != 0) throw NonZeroExit(result.exit_code, result.err.substr(0, 500));
    return parse_hypotheses(result.out, "command output for " + audio_path.string(), limits);
}

// ---------------------------------------------------------------------------
// Deterministic mock recognizer

struct TruthSegment {
    std::string id;
    std::string audio_path;
    WordSeq words;
    double start_s = 0.0;
    double end_s = 0.0;
};

struct NoiseSpec {
    double substitution_rate = 0.0;
    double insertion_rate = 0.0;
    double deletion_rate = 0.0;
    // Words drawn for substitutions and insertions. Substitutions never
    // reproduce the original word.
    WordSeq replacement_vocab = {"zub", "quix", "flom", "dreb", "yasp", "vurn", "kelt", "mipo"};
    std::string asr_id = "mock-asr";
};

namespace detail {

// Portable uniform draws: std distributions differ across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    std::size_t below(std::size_t n) {
        // Rejection sampling keeps the draw unbiased.
        const std::uint64_t bound = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t x = 0;
        do {
            x = engine_();
        } while (x >= limit);
        return static_cast<std::size_t>(x % bound);
    }

    bool chance(double p) { return p > 0.0 && uniform() < p; }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

} // namespace detail

inline HypothesisSet mock_asr(const std::vector<TruthSegment>& truth, const NoiseSpec& noise, std::uint64_t seed) {
    for (double r : {noise.substitution_rate, noise.insertion_rate, noise.deletion_rate}) {
        if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("noise rates must lie in [0, 1]");
    }
    const bool needs_vocab = noise.substitution_rate > 0.0 || noise.insertion_rate > 0.0;
    if (needs_vocab && noise.replacement_vocab.empty()) throw ConfigError("replacement vocabulary is empty");

    detail::Rng rng(seed);
    HypothesisSet hs;
    hs.asr_id = noise.asr_id;
    for (const auto& seg : truth) {
        WordSeq pred;
        for (const auto& w : seg.words) {
            if (rng.chance(noise.deletion_rate)) continue;
            if (rng.chance(noise.substitution_rate)) {
                std::string repl = noise.replacement_vocab[rng.below(noise.replacement_vocab.size())];
                if (repl == w && noise.replacement_vocab.size() > 1) {
                    while (repl == w) repl = noise.replacement_vocab[rng.below(noise.replacement_vocab.size())];
                }
                pred.push_back(std::move(repl));
            } else {
                pred.push_back(w);
            }
            if (rng.chance(noise.insertion_rate)) {
                pred.push_back(noise.replacement_vocab[rng.below(noise.replacement_vocab.size())]);
            }
        }
        Utterance u;
        u.id = seg.id;
        u.audio_path = seg.audio_path;
        u.start_s = seg.start_s;
        u.end_s = seg.end_s;
        u.pred_text_raw = join_words(pred);
        u.pred_words = clean_words(u.pred_text_raw);
        hs.utterances.push_back(std::move(u));
    }
    return hs;
}

} // namespace fasa
