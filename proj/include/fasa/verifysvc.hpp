#pragma once

// Human review of the verify queue.
//
// State is event-sourced: the queue file is immutable, and every reviewer
// decision is appended (and fsync'ed) to decisions.jsonl before it is
// acknowledged. Replaying the log over the queue rebuilds the session, which
// is all a restart after a crash has to do.
//
// HTTP surface (JSON unless noted):
//   GET  /api/items?status=pending|decided|all&page=N&page_size=K
//   GET  /api/items/{id}
//   GET  /api/audio/{id}                 audio/wav
//   POST /api/decisions                  {"item_id", "action", "manual_text"?}
//   POST /api/export

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "fasa/dataset.hpp"
#include "fasa/errors.hpp"

namespace fasa {

enum class ItemStatus { pending, decided };

inline const char* to_string(ItemStatus s) { return s == ItemStatus::pending ? "pending" : "decided"; }

inline std::string utc_now_iso8601() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Pure state machine over a fixed queue. No I/O.
class ReviewQueue {
public:
    explicit ReviewQueue(std::vector<VerifyItem> items) : items_(std::move(items)) {
        for (std::size_t k = 0; k < items_.size(); ++k) {
            if (!index_.emplace(items_[k].id, k).second) throw IdCollision("duplicate queue id '" + items_[k].id + "'");
        }
    }

    const std::vector<VerifyItem>& items() const noexcept { return items_; }

    const VerifyItem& item(const std::string& id) const { return items_[position(id)]; }

    ItemStatus status(const std::string& id) const {
        position(id);
        return decisions_.contains(id) ? ItemStatus::decided : ItemStatus::pending;
    }

    const VerifyDecision* decision(const std::string& id) const {
        const auto it = decisions_.find(id);
        return it == decisions_.end() ? nullptr : &it->second;
    }

    // Throws for anything apply() would reject. Returns false when `d`
    // repeats the recorded decision (a no-op), true when it is new.
    bool check(const VerifyDecision& d) const {
        const auto& it = item(d.item_id);
        (void)it;
        if (d.action == DecisionAction::manual && clean_words(d.manual_text).empty()) {
            throw MissingManualText("manual decision for '" + d.item_id + "' needs non-empty text");
        }
        if (const auto* prev = decision(d.item_id)) {
            if (prev->same_choice(d)) return false;
            throw AlreadyDecided("item '" + d.item_id + "' was already decided as " + to_string(prev->action));
        }
        return true;
    }

    bool apply(const VerifyDecision& d) {
        if (!check(d)) return false;
        decisions_.emplace(d.item_id, d);
        order_.push_back(d.item_id);
        return true;
    }

    // Decisions in the order they were first recorded.
    std::vector<VerifyDecision> decisions() const {
        std::vector<VerifyDecision> out;
        out.reserve(order_.size());
        for (const auto& id : order_) out.push_back(decisions_.at(id));
        return out;
    }

    // Items with the requested status, worst WER first (queue order on ties).
    std::vector<const VerifyItem*> select(std::optional<ItemStatus> status) const {
        std::vector<const VerifyItem*> out;
        for (const auto& it : items_) {
            if (!status || this->status(it.id) == *status) out.push_back(&it);
        }
        std::stable_sort(out.begin(), out.end(), [](const VerifyItem* a, const VerifyItem* b) { return a->wer > b->wer; });
        return out;
    }

    std::size_t pending_count() const noexcept { return items_.size() - decisions_.size(); }
    std::size_t decided_count() const noexcept { return decisions_.size(); }

private:
    std::size_t position(const std::string& id) const {
        const auto it = index_.find(id);
        if (it == index_.end()) throw UnknownId("no queue item '" + id + "'");
        return it->second;
    }

    std::vector<VerifyItem> items_;
    std::map<std::string, std::size_t> index_;
    std::map<std::string, VerifyDecision> decisions_;
    std::vector<std::string> order_;
};

// Append-only JSONL decision log. append() returns only after the line is on
// stable storage.
class DecisionLog {
public:
    explicit DecisionLog(std::filesystem::path path) : path_(std::move(path)) {
        drop_torn_tail(path_);
        fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
        if (fd_ < 0) throw IoError("cannot open decision log " + path_.string());
    }

    DecisionLog(const DecisionLog&) = delete;
    DecisionLog& operator=(const DecisionLog&) = delete;

    ~DecisionLog() {
        if (fd_ >= 0) ::close(fd_);
    }

    const std::filesystem::path& path() const noexcept { return path_; }

    void append(const VerifyDecision& d) {
        const std::string line = to_json(d).dump() + "\n";
        std::size_t done = 0;
        while (done < line.size()) {
            const auto n = ::write(fd_, line.data() + done, line.size() - done);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw IoError("write to " + path_.string() + " failed");
            }
            done += static_cast<std::size_t>(n);
        }
        if (::fsync(fd_) != 0) throw IoError("fsync of " + path_.string() + " failed");
    }

    // Entries on disk. An unterminated final line (crash during append, never
    // acknowledged) is dropped; damage anywhere else is an error.
    static std::vector<VerifyDecision> read(const std::filesystem::path& path) {
        std::vector<VerifyDecision> out;
        if (!std::filesystem::exists(path)) return out;
        const std::string text = read_file(path);
        std::size_t pos = 0;
        std::size_t line_no = 0;
        while (pos < text.size()) {
            ++line_no;
            const auto eol = text.find('\n', pos);
            const bool terminated = eol != std::string::npos;
            const std::string line = text.substr(pos, terminated ? eol - pos : std::string::npos);
            pos = terminated ? eol + 1 : text.size();
            if (!terminated) break;
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            const std::string where = path.string() + ":" + std::to_string(line_no);
            try {
                const auto j = nlohmann::json::parse(line);
                out.push_back(decision_from_json(j, where));
            } catch (const nlohmann::json::exception&) {
                throw SchemaError(where + ": corrupt decision log entry");
            }
        }
        return out;
    }

private:
    // Cuts an unterminated tail so the next append starts on a fresh line.
    static void drop_torn_tail(const std::filesystem::path& path) {
        if (!std::filesystem::exists(path)) return;
        const std::string text = read_file(path);
        if (text.empty() || text.back() == '\n') return;
        const auto keep = text.rfind('\n');
        std::filesystem::resize_file(path, keep == std::string::npos ? 0 : keep + 1);
    }

    std::filesystem::path path_;
    int fd_ = -1;
};

struct VerifyServiceConfig {
    std::filesystem::path verify_items;      // data_verify.jsonl
    std::filesystem::path decision_log;      // decisions.jsonl
    std::filesystem::path auto_manifest;     // data_align.manifest.jsonl
    std::filesystem::path final_manifest;    // written by export
    std::size_t default_page_size = 20;
};

struct ItemPage {
    std::vector<const VerifyItem*> items;
    std::size_t page = 1;
    std::size_t page_size = 0;
    std::size_t total = 0;
    std::size_t pages = 0;
};

// Queue + log behind one writer lock. Safe for concurrent HTTP handlers.
class VerifyService {
public:
    explicit VerifyService(VerifyServiceConfig config)
        : config_(std::move(config)), queue_(load_verify_items(config_.verify_items)) {
        for (const auto& d : DecisionLog::read(config_.decision_log)) {
            try {
                queue_.apply(d);
            } catch (const Error& e) {
                throw SchemaError(config_.decision_log.string() + ": log does not replay: " + e.what());
            }
        }
        log_.emplace(config_.decision_log);
    }

    const VerifyServiceConfig& config() const noexcept { return config_; }

    ItemPage list(std::optional<ItemStatus> status, std::size_t page, std::size_t page_size) const {
        std::shared_lock lock(mutex_);
        if (page_size == 0) page_size = config_.default_page_size;
        if (page == 0) page = 1;
        auto all = queue_.select(status);
        ItemPage out;
        out.page = page;
        out.page_size = page_size;
        out.total = all.size();
        out.pages = (all.size() + page_size - 1) / page_size;
        const std::size_t first = (page - 1) * page_size;
        for (std::size_t k = first; k < all.size() && k < first + page_size; ++k) out.items.push_back(all[k]);
        return out;
    }

    ItemPage list_pending(std::size_t page = 1, std::size_t page_size = 0) const {
        return list(ItemStatus::pending, page, page_size);
    }

    nlohmann::ordered_json describe(const std::string& id) const {
        std::shared_lock lock(mutex_);
        return describe_locked(id);
    }

    std::vector<std::uint8_t> get_audio(const std::string& id) const {
        std::filesystem::path audio;
        {
            std::shared_lock lock(mutex_);
            audio = resolve(queue_.item(id).audio_path);
        }
        return detail::read_bytes(audio);
    }

    // Records `d` durably and returns the item's new state. Re-posting the
    // recorded decision changes nothing.
    nlohmann::ordered_json post_decision(VerifyDecision d) {
        std::unique_lock lock(mutex_);
        if (queue_.check(d)) {
            if (d.decided_at.empty()) d.decided_at = utc_now_iso8601();
            if (d.action != DecisionAction::manual) d.manual_text.clear();
            log_->append(d);
            queue_.apply(d);
        }
        return describe_locked(d.item_id);
    }

    Manifest export_final() const {
        std::vector<VerifyDecision> decisions;
        std::vector<VerifyItem> items;
        {
            std::shared_lock lock(mutex_);
            decisions = queue_.decisions();
            items = queue_.items();
        }
        const Manifest merged = merge_decisions(load_manifest(config_.auto_manifest), items, decisions);
        if (!config_.final_manifest.empty()) emit_manifest(merged, config_.final_manifest);
        return merged;
    }

    std::size_t pending_count() const {
        std::shared_lock lock(mutex_);
        return queue_.pending_count();
    }

private:
    std::filesystem::path resolve(const std::string& p) const {
        std::filesystem::path path(p);
        return path.is_relative() ? config_.verify_items.parent_path() / path : path;
    }

    nlohmann::ordered_json describe_locked(const std::string& id) const {
        const auto& item = queue_.item(id);
        auto j = to_json(item);
        j["audio_url"] = "/api/audio/" + item.id;
        j["status"] = to_string(queue_.status(id));
        if (const auto* d = queue_.decision(id)) j["decision"] = to_json(*d);
        return j;
    }

    VerifyServiceConfig config_;
    mutable std::shared_mutex mutex_;
    ReviewQueue queue_;
    std::optional<DecisionLog> log_;
};

// ---------------------------------------------------------------------------
// HTTP binding

namespace detail {

inline void send_json(httplib::Response& res, int status, const nlohmann::ordered_json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, int status, const char* kind, const std::string& message) {
    send_json(res, status, {{"error", kind}, {"message", message}});
}

template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
    try {
        fn();
    } catch (const UnknownId& e) {
        send_error(res, 404, "UnknownId", e.what());
    } catch (const AlreadyDecided& e) {
        send_error(res, 409, "AlreadyDecided", e.what());
    } catch (const MissingManualText& e) {
        send_error(res, 400, "MissingManualText", e.what());
    } catch (const SchemaError& e) {
        send_error(res, 400, "SchemaError", e.what());
    } catch (const IoError& e) {
        send_error(res, 500, "IoError", e.what());
    } catch (const std::exception& e) {
        send_error(res, 500, "InternalError", e.what());
    }
}

inline std::size_t query_number(const httplib::Request& req, const char* key, std::size_t fallback) {
    if (!req.has_param(key)) return fallback;
    const auto v = req.get_param_value(key);
    try {
        std::size_t used = 0;
        const auto n = std::stoull(v, &used);
        if (used != v.size()) throw SchemaError(std::string("bad ") + key);
        return static_cast<std::size_t>(n);
    } catch (const std::logic_error&) {
        throw SchemaError(std::string("query parameter ") + key + " must be a non-negative integer");
    }
}

} // namespace detail

inline void register_routes(httplib::Server& server, VerifyService& service) {
    server.Get("/api/items", [&service](const httplib::Request& req, httplib::Response& res) {
        detail::guarded(res, [&] {
            std::optional<ItemStatus> status = ItemStatus::pending;
            if (req.has_param("status")) {
                const auto s = req.get_param_value("status");
                if (s == "pending") status = ItemStatus::pending;
                else if (s == "decided") status = ItemStatus::decided;
                else if (s == "all") status.reset();
                else throw SchemaError("status must be pending, decided or all");
            }
            const auto page = service.list(status, detail::query_number(req, "page", 1),
                                           detail::query_number(req, "page_size", 0));
            nlohmann::ordered_json items = nlohmann::ordered_json::array();
            for (const auto* it : page.items) items.push_back(service.describe(it->id));
            detail::send_json(res, 200,
                              {{"items", std::move(items)},
                               {"page", page.page},
                               {"page_size", page.page_size},
                               {"pages", page.pages},
                               {"total", page.total}});
        });
    });

    server.Get(R"(/api/items/([^/]+))", [&service](const httplib::Request& req, httplib::Response& res) {
        detail::guarded(res, [&] { detail::send_json(res, 200, service.describe(req.matches[1])); });
    });

    server.Get(R"(/api/audio/([^/]+))", [&service](const httplib::Request& req, httplib::Response& res) {
        detail::guarded(res, [&] {
            const auto bytes = service.get_audio(req.matches[1]);
            res.status = 200;
            res.set_content(std::string(bytes.begin(), bytes.end()), "audio/wav");
        });
    });

    server.Post("/api/decisions", [&service](const httplib::Request& req, httplib::Response& res) {
        detail::guarded(res, [&] {
            nlohmann::json body;
            try {
                body = nlohmann::json::parse(req.body);
            } catch (const nlohmann::json::parse_error&) {
                throw SchemaError("request body is not JSON");
            }
            if (!body.is_object()) throw SchemaError("request body must be an object");
            auto decision = decision_from_json(body, "request");
            decision.decided_at.clear(); // the server stamps the time
            detail::send_json(res, 200, service.post_decision(std::move(decision)));
        });
    });

    server.Post("/api/export", [&service](const httplib::Request&, httplib::Response& res) {
        detail::guarded(res, [&] {
            const auto m = service.export_final();
            std::size_t reviewed = 0;
            for (const auto& r : m.records) reviewed += r.source != RecordSource::automatic;
            detail::send_json(res, 200,
                              {{"path", service.config().final_manifest.string()},
                               {"records", m.records.size()},
                               {"reviewed_records", reviewed}});
        });
    });
}

} // namespace fasa
