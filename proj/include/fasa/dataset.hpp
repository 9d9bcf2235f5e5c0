#pragma once

// Segment audio, dataset manifests and the review-queue file format.
//
// Only 16 kHz / 16-bit / mono PCM WAV is accepted. Convert other material
// beforehand, e.g. `ffmpeg -i in.mp3 -ac 1 -ar 16000 -sample_fmt s16 out.wav`.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "fasa/aligncore.hpp"
#include "fasa/errors.hpp"
#include "fasa/transcript.hpp"
#include "fasa/version.hpp"

namespace fasa {

// ---------------------------------------------------------------------------
// WAV

inline constexpr std::uint32_t kSampleRate = 16000;

struct WavAudio {
    std::uint32_t sample_rate = kSampleRate;
    // Little-endian 16-bit samples exactly as stored in the data chunk.
    std::vector<std::uint8_t> pcm;

    std::size_t sample_count() const noexcept { return pcm.size() / 2; }
    double duration_s() const noexcept { return static_cast<double>(sample_count()) / sample_rate; }
};

namespace detail {

inline std::uint32_t le32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t le16(const std::uint8_t* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline void put32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

inline void put16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("short write to " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

inline void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
    write_bytes_atomic(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

} // namespace detail

inline WavAudio parse_wav(std::span<const std::uint8_t> bytes, const std::string& source = "<wav>") {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        throw UnsupportedFormat(source + ": not a RIFF/WAVE file");
    }
    bool have_fmt = false;
    WavAudio audio;
    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const auto* chunk = bytes.data() + pos;
        const std::uint32_t size = detail::le32(chunk + 4);
        const std::size_t body = pos + 8;
        if (std::memcmp(chunk, "fmt ", 4) == 0) {
            if (size < 16 || body + 16 > bytes.size()) throw UnsupportedFormat(source + ": truncated fmt chunk");
            const auto* f = bytes.data() + body;
            std::uint16_t format = detail::le16(f);
            const std::uint16_t channels = detail::le16(f + 2);
            const std::uint32_t rate = detail::le32(f + 4);
            const std::uint16_t bits = detail::le16(f + 14);
            if (format == 0xFFFE && size >= 40 && body + 26 <= bytes.size()) {
                format = detail::le16(f + 24); // WAVE_FORMAT_EXTENSIBLE sub-format GUID starts with the tag
            }
            if (format != 1) throw UnsupportedFormat(source + ": not PCM");
            if (channels != 1) throw UnsupportedFormat(source + ": " + std::to_string(channels) + " channels, need mono");
            if (rate != kSampleRate) throw UnsupportedFormat(source + ": " + std::to_string(rate) + " Hz, need 16000");
            if (bits != 16) throw UnsupportedFormat(source + ": " + std::to_string(bits) + "-bit, need 16-bit");
            audio.sample_rate = rate;
            have_fmt = true;
        } else if (std::memcmp(chunk, "data", 4) == 0) {
            if (!have_fmt) throw UnsupportedFormat(source + ": data chunk before fmt chunk");
            const std::size_t avail = std::min<std::size_t>(size, bytes.size() - body);
            audio.pcm.assign(bytes.begin() + static_cast<std::ptrdiff_t>(body),
                             bytes.begin() + static_cast<std::ptrdiff_t>(body + avail - avail % 2));
            return audio;
        }
        pos = body + size + (size & 1);
    }
    throw UnsupportedFormat(source + ": no data chunk");
}

inline WavAudio load_wav(const std::filesystem::path& path) {
    const auto bytes = detail::read_bytes(path);
    return parse_wav(bytes, path.string());
}

// Canonical 44-byte header followed by the samples.
inline std::vector<std::uint8_t> encode_wav(std::span<const std::uint8_t> pcm, std::uint32_t sample_rate = kSampleRate) {
    std::vector<std::uint8_t> out;
    out.reserve(44 + pcm.size());
    const auto data_size = static_cast<std::uint32_t>(pcm.size());
    out.insert(out.end(), {'R', 'I', 'F', 'F'});
    detail::put32(out, 36 + data_size);
    out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
    detail::put32(out, 16);
    detail::put16(out, 1); // PCM
    detail::put16(out, 1); // mono
    detail::put32(out, sample_rate);
    detail::put32(out, sample_rate * 2);
    detail::put16(out, 2);
    detail::put16(out, 16);
    out.insert(out.end(), {'d', 'a', 't', 'a'});
    detail::put32(out, data_size);
    out.insert(out.end(), pcm.begin(), pcm.end());
    return out;
}

inline std::vector<std::uint8_t> encode_wav(std::span<const std::int16_t> samples, std::uint32_t sample_rate = kSampleRate) {
    std::vector<std::uint8_t> pcm;
    pcm.reserve(samples.size() * 2);
    for (auto s : samples) detail::put16(pcm, static_cast<std::uint16_t>(s));
    return encode_wav(std::span<const std::uint8_t>(pcm), sample_rate);
}

// Sample index of a timestamp; halves round away from zero.
inline std::size_t sample_index(double seconds, std::uint32_t sample_rate = kSampleRate) {
    return static_cast<std::size_t>(std::llround(seconds * sample_rate));
}

// Samples [round(start*rate), round(end*rate)) as a standalone WAV.
inline std::vector<std::uint8_t> cut_segment(const WavAudio& source, double start_s, double end_s) {
    if (!(start_s >= 0.0) || !(end_s > start_s)) {
        throw OutOfRange("segment [" + std::to_string(start_s) + ", " + std::to_string(end_s) + ") is empty or negative");
    }
    const std::size_t first = sample_index(start_s, source.sample_rate);
    const std::size_t last = sample_index(end_s, source.sample_rate);
    if (last > source.sample_count() || first >= last) {
        throw OutOfRange("segment [" + std::to_string(start_s) + ", " + std::to_string(end_s) + ") outside " +
                         std::to_string(source.duration_s()) + " s of audio");
    }
    return encode_wav(std::span<const std::uint8_t>(source.pcm).subspan(first * 2, (last - first) * 2),
                      source.sample_rate);
}

inline std::vector<std::uint8_t> cut_segment(const std::filesystem::path& source, double start_s, double end_s) {
    return cut_segment(load_wav(source), start_s, end_s);
}

// ---------------------------------------------------------------------------
// Records and manifests

enum class RecordSource { automatic, user_selected, user_manual };

inline const char* to_string(RecordSource s) {
    switch (s) {
    case RecordSource::automatic: return "auto";
    case RecordSource::user_selected: return "user_selected";
    case RecordSource::user_manual: return "user_manual";
    }
    return "auto";
}

inline std::optional<RecordSource> parse_record_source(std::string_view s) {
    if (s == "auto") return RecordSource::automatic;
    if (s == "user_selected") return RecordSource::user_selected;
    if (s == "user_manual") return RecordSource::user_manual;
    return std::nullopt;
}

// Carried opaquely from <name>.meta.json next to each recording.
struct SpeakerMeta {
    std::optional<std::string> speaker_id;
    std::optional<double> age_months;
    std::optional<std::string> gender;
    std::optional<std::string> disorder;

    friend bool operator==(const SpeakerMeta&, const SpeakerMeta&) = default;
};

struct SegmentRecord {
    std::string id;
    std::string audio_path;
    std::string source_audio;
    double start_s = 0.0;
    double end_s = 0.0;
    WordSeq transcript;
    RecordSource source = RecordSource::automatic;
    SpeakerMeta speaker;

    friend bool operator==(const SegmentRecord&, const SegmentRecord&) = default;
};

struct Manifest {
    std::vector<SegmentRecord> records;
    std::string tool_version = kToolVersion;
    Thresholds thresholds;
    std::string asr_id;
};

inline bool same_thresholds(const Thresholds& a, const Thresholds& b) {
    return a.sigma_a == b.sigma_a && a.sigma_i == b.sigma_i && a.pgc_rel == b.pgc_rel &&
           a.len_ratio_rho == b.len_ratio_rho;
}

inline bool operator==(const Manifest& a, const Manifest& b) {
    return a.records == b.records && a.tool_version == b.tool_version && a.asr_id == b.asr_id &&
           same_thresholds(a.thresholds, b.thresholds);
}

inline nlohmann::ordered_json to_json(const SpeakerMeta& s) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    if (s.speaker_id) j["speaker_id"] = *s.speaker_id;
    if (s.age_months) j["age_months"] = *s.age_months;
    if (s.gender) j["gender"] = *s.gender;
    if (s.disorder) j["disorder"] = *s.disorder;
    return j;
}

namespace detail {

template <typename Json>
SpeakerMeta speaker_from_json(const Json& j, const std::string& where) {
    SpeakerMeta s;
    if (!j.is_object()) throw SchemaError(where + ": \"speaker\" must be an object");
    try {
        if (j.contains("speaker_id")) s.speaker_id = j.at("speaker_id").template get<std::string>();
        if (j.contains("age_months")) s.age_months = j.at("age_months").template get<double>();
        if (j.contains("gender")) s.gender = j.at("gender").template get<std::string>();
        if (j.contains("disorder")) s.disorder = j.at("disorder").template get<std::string>();
    } catch (const nlohmann::json::exception&) {
        throw SchemaError(where + ": malformed speaker metadata");
    }
    return s;
}

template <typename T, typename Json>
T field(const Json& obj, const char* key, const std::string& where) {
    const auto it = obj.find(key);
    if (it == obj.end()) throw SchemaError(where + ": missing \"" + key + "\"");
    try {
        return it->template get<T>();
    } catch (const nlohmann::json::exception&) {
        throw SchemaError(where + ": \"" + key + "\" has the wrong type");
    }
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& manifest_path) {
    auto name = manifest_path.filename().string();
    if (name.ends_with(".jsonl")) name.resize(name.size() - 6);
    return manifest_path.parent_path() / (name + ".meta.json");
}

template <typename Fn>
void for_each_jsonl_line(const std::filesystem::path& path, Fn&& fn) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        const std::string where = path.string() + ":" + std::to_string(line_no);
        nlohmann::ordered_json j;
        try {
            j = nlohmann::ordered_json::parse(line);
        } catch (const nlohmann::json::parse_error&) {
            throw SchemaError(where + ": invalid JSON");
        }
        if (!j.is_object()) throw SchemaError(where + ": line is not an object");
        fn(j, where);
    }
}

} // namespace detail

inline nlohmann::ordered_json to_json(const SegmentRecord& r) {
    return {{"id", r.id},
            {"audio", r.audio_path},
            {"source_audio", r.source_audio},
            {"start_s", r.start_s},
            {"end_s", r.end_s},
            {"transcript", r.transcript},
            {"source", to_string(r.source)},
            {"speaker", to_json(r.speaker)}};
}

inline SegmentRecord record_from_json(const nlohmann::ordered_json& j, const std::string& where) {
    SegmentRecord r;
    r.id = detail::field<std::string>(j, "id", where);
    r.audio_path = detail::field<std::string>(j, "audio", where);
    r.source_audio = detail::field<std::string>(j, "source_audio", where);
    r.start_s = detail::field<double>(j, "start_s", where);
    r.end_s = detail::field<double>(j, "end_s", where);
    r.transcript = detail::field<WordSeq>(j, "transcript", where);
    const auto source = parse_record_source(detail::field<std::string>(j, "source", where));
    if (!source) throw SchemaError(where + ": unknown \"source\"");
    r.source = *source;
    if (const auto it = j.find("speaker"); it != j.end()) r.speaker = detail::speaker_from_json(*it, where);
    if (!(r.end_s > r.start_s)) throw SchemaError(where + ": end_s must exceed start_s");
    if (r.transcript.empty()) throw SchemaError(where + ": empty transcript");
    return r;
}

struct EmitOptions {
    // Refuse to write records whose audio file does not exist.
    bool require_audio = true;
};

inline std::string manifest_lines(const std::vector<SegmentRecord>& records) {
    std::string text;
    for (const auto& r : records) {
        text += to_json(r).dump();
        text += '\n';
    }
    return text;
}

// Writes `path` (JSONL, one record per line) and its sidecar
// `<name>.meta.json` holding the run-level fields.
inline void emit_manifest(const Manifest& manifest, const std::filesystem::path& path, const EmitOptions& opts = {}) {
    std::set<std::string> ids;
    for (const auto& r : manifest.records) {
        if (!ids.insert(r.id).second) throw IdCollision("duplicate record id '" + r.id + "'");
        if (opts.require_audio) {
            std::filesystem::path audio(r.audio_path);
            if (audio.is_relative()) audio = path.parent_path() / audio;
            if (!std::filesystem::exists(audio)) throw IoError("segment file missing for '" + r.id + "': " + audio.string());
        }
    }
    const auto dir = path.parent_path();
    if (!dir.empty() && !std::filesystem::is_directory(dir)) throw IoError("no such directory: " + dir.string());

    const nlohmann::ordered_json meta = {{"tool_version", manifest.tool_version},
                                         {"asr_id", manifest.asr_id},
                                         {"thresholds",
                                          {{"sigma_a", manifest.thresholds.sigma_a},
                                           {"sigma_i", manifest.thresholds.sigma_i},
                                           {"pgc_rel", manifest.thresholds.pgc_rel},
                                           {"len_ratio_rho", manifest.thresholds.len_ratio_rho}}}};
    detail::write_text_atomic(detail::sidecar_path(path), meta.dump(2) + "\n");
    detail::write_text_atomic(path, manifest_lines(manifest.records));
}

inline Manifest load_manifest(const std::filesystem::path& path) {
    Manifest m;
    std::set<std::string> ids;
    detail::for_each_jsonl_line(path, [&](const nlohmann::ordered_json& j, const std::string& where) {
        auto r = record_from_json(j, where);
        if (!ids.insert(r.id).second) throw IdCollision(where + ": duplicate record id '" + r.id + "'");
        m.records.push_back(std::move(r));
    });

    const auto sidecar = detail::sidecar_path(path);
    if (std::filesystem::exists(sidecar)) {
        nlohmann::ordered_json meta;
        try {
            meta = nlohmann::ordered_json::parse(read_file(sidecar));
        } catch (const nlohmann::json::parse_error&) {
            throw SchemaError(sidecar.string() + ": invalid JSON");
        }
        const std::string where = sidecar.string();
        m.tool_version = detail::field<std::string>(meta, "tool_version", where);
        m.asr_id = detail::field<std::string>(meta, "asr_id", where);
        const auto th = detail::field<nlohmann::ordered_json>(meta, "thresholds", where);
        m.thresholds.sigma_a = detail::field<double>(th, "sigma_a", where);
        m.thresholds.sigma_i = detail::field<double>(th, "sigma_i", where);
        m.thresholds.pgc_rel = detail::field<double>(th, "pgc_rel", where);
        m.thresholds.len_ratio_rho = detail::field<double>(th, "len_ratio_rho", where);
    }
    return m;
}

// ---------------------------------------------------------------------------
// Review queue items and decisions

struct VerifyItem {
    std::string id;
    std::string audio_path; // cut segment
    std::string source_audio;
    double start_s = 0.0;
    double end_s = 0.0;
    WordSeq gt;
    WordSeq pred;
    double wer = 0.0;
    SpeakerMeta speaker;

    friend bool operator==(const VerifyItem&, const VerifyItem&) = default;
};

inline nlohmann::ordered_json to_json(const VerifyItem& v) {
    return {{"id", v.id},       {"audio", v.audio_path}, {"source_audio", v.source_audio},
            {"start_s", v.start_s}, {"end_s", v.end_s},  {"gt", v.gt},
            {"pred", v.pred},   {"wer", v.wer},          {"speaker", to_json(v.speaker)}};
}

inline VerifyItem verify_item_from_json(const nlohmann::ordered_json& j, const std::string& where) {
    VerifyItem v;
    v.id = detail::field<std::string>(j, "id", where);
    v.audio_path = detail::field<std::string>(j, "audio", where);
    v.source_audio = detail::field<std::string>(j, "source_audio", where);
    v.start_s = detail::field<double>(j, "start_s", where);
    v.end_s = detail::field<double>(j, "end_s", where);
    v.gt = detail::field<WordSeq>(j, "gt", where);
    v.pred = detail::field<WordSeq>(j, "pred", where);
    v.wer = detail::field<double>(j, "wer", where);
    if (const auto it = j.find("speaker"); it != j.end()) v.speaker = detail::speaker_from_json(*it, where);
    return v;
}

inline void emit_verify_items(const std::vector<VerifyItem>& items, const std::filesystem::path& path) {
    std::string text;
    for (const auto& v : items) {
        text += to_json(v).dump();
        text += '\n';
    }
    detail::write_text_atomic(path, text);
}

inline std::vector<VerifyItem> load_verify_items(const std::filesystem::path& path) {
    std::vector<VerifyItem> items;
    std::set<std::string> ids;
    detail::for_each_jsonl_line(path, [&](const nlohmann::ordered_json& j, const std::string& where) {
        auto v = verify_item_from_json(j, where);
        if (!ids.insert(v.id).second) throw IdCollision(where + ": duplicate item id '" + v.id + "'");
        items.push_back(std::move(v));
    });
    return items;
}

enum class DecisionAction { accept_gt, accept_pred, manual, reject };

inline const char* to_string(DecisionAction a) {
    switch (a) {
    case DecisionAction::accept_gt: return "accept_gt";
    case DecisionAction::accept_pred: return "accept_pred";
    case DecisionAction::manual: return "manual";
    case DecisionAction::reject: return "reject";
    }
    return "reject";
}

inline std::optional<DecisionAction> parse_decision_action(std::string_view s) {
    if (s == "accept_gt") return DecisionAction::accept_gt;
    if (s == "accept_pred") return DecisionAction::accept_pred;
    if (s == "manual") return DecisionAction::manual;
    if (s == "reject") return DecisionAction::reject;
    return std::nullopt;
}

struct VerifyDecision {
    std::string item_id;
    DecisionAction action = DecisionAction::reject;
    std::string manual_text; // only meaningful for manual
    std::string decided_at;  // ISO-8601 UTC

    // Same decision, ignoring when it was made.
    bool same_choice(const VerifyDecision& o) const {
        return item_id == o.item_id && action == o.action &&
               (action != DecisionAction::manual || manual_text == o.manual_text);
    }

    friend bool operator==(const VerifyDecision&, const VerifyDecision&) = default;
};

inline nlohmann::ordered_json to_json(const VerifyDecision& d) {
    nlohmann::ordered_json j = {{"item_id", d.item_id}, {"action", to_string(d.action)}};
    if (d.action == DecisionAction::manual) j["manual_text"] = d.manual_text;
    j["decided_at"] = d.decided_at;
    return j;
}

template <typename Json>
VerifyDecision decision_from_json(const Json& j, const std::string& where) {
    VerifyDecision d;
    d.item_id = detail::field<std::string>(j, "item_id", where);
    const auto action = parse_decision_action(detail::field<std::string>(j, "action", where));
    if (!action) throw SchemaError(where + ": unknown \"action\"");
    d.action = *action;
    if (const auto it = j.find("manual_text"); it != j.end() && !it->is_null()) {
        if (!it->is_string()) throw SchemaError(where + ": \"manual_text\" must be a string");
        d.manual_text = it->template get<std::string>();
    }
    if (const auto it = j.find("decided_at"); it != j.end() && it->is_string()) {
        d.decided_at = it->template get<std::string>();
    }
    return d;
}

// Transcript a decision contributes to the dataset, or nothing for reject.
inline std::optional<std::pair<WordSeq, RecordSource>> decided_transcript(const VerifyItem& item,
                                                                          const VerifyDecision& d) {
    switch (d.action) {
    case DecisionAction::accept_gt: return std::pair{item.gt, RecordSource::user_selected};
    case DecisionAction::accept_pred: return std::pair{item.pred, RecordSource::user_selected};
    case DecisionAction::manual: {
        auto words = clean_words(d.manual_text);
        if (words.empty()) throw MissingManualText("manual decision for '" + d.item_id + "' has no words");
        return std::pair{std::move(words), RecordSource::user_manual};
    }
    case DecisionAction::reject: return std::nullopt;
    }
    return std::nullopt;
}

// Appends reviewer-approved items to the automatically aligned manifest.
// Appended records follow queue order, so the result does not depend on the
// order decisions were made in.
inline Manifest merge_decisions(const Manifest& auto_aligned, const std::vector<VerifyItem>& queue,
                                const std::vector<VerifyDecision>& decisions) {
    std::map<std::string, const VerifyDecision*> by_id;
    std::set<std::string> known;
    for (const auto& item : queue) known.insert(item.id);
    for (const auto& d : decisions) {
        if (!known.contains(d.item_id)) throw UnknownId("decision for unknown item '" + d.item_id + "'");
        if (!by_id.emplace(d.item_id, &d).second) throw DuplicateDecision("two decisions for item '" + d.item_id + "'");
    }

    Manifest out = auto_aligned;
    std::set<std::string> taken;
    for (const auto& r : out.records) taken.insert(r.id);
    for (const auto& item : queue) {
        const auto it = by_id.find(item.id);
        if (it == by_id.end()) continue;
        auto contribution = decided_transcript(item, *it->second);
        if (!contribution) continue;
        if (taken.contains(item.id)) throw IdCollision("reviewed item '" + item.id + "' clashes with an aligned record");
        taken.insert(item.id);
        out.records.push_back({item.id, item.audio_path, item.source_audio, item.start_s, item.end_s,
                               std::move(contribution->first), contribution->second, item.speaker});
    }
    return out;
}

} // namespace fasa
