#pragma once

// End-to-end alignment run over a corpus directory.
//
// A corpus directory holds recordings `<name>.wav`, each with a transcript
// `<name>.txt` (plain) or `<name>.cha` (CHAT) and optionally speaker metadata
// `<name>.meta.json`. The run writes into out_dir:
//
//   data_align.manifest.jsonl (+ .meta.json)  accepted segments
//   data_verify.jsonl                         review queue
//   segments/<id>.wav                         cut audio for both
//   run_report.json                           counts and timing

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "fasa/aligncore.hpp"
#include "fasa/dataset.hpp"
#include "fasa/errors.hpp"
#include "fasa/hypothesis.hpp"
#include "fasa/transcript.hpp"
#include "fasa/version.hpp"

namespace fasa {

class CorpusError : public Error {
public:
    using Error::Error;
};

struct RunConfig {
    std::filesystem::path corpus_dir;
    std::filesystem::path out_dir;
    Thresholds thresholds;
    TranscriptFormat clean_mode = TranscriptFormat::plain;
    CleanOptions clean_options;

    // Exactly one ASR source.
    std::optional<std::filesystem::path> asr_hyp;
    std::optional<std::string> asr_cmd;

    // Second-round predictions for the post-generation check; both empty
    // means the check is off.
    std::optional<std::filesystem::path> pgc_hyp;
    std::optional<std::string> pgc_cmd;

    unsigned workers = 1;
    bool strict = false;
    HypothesisLimits limits;

    void validate() const {
        thresholds.validate();
        if (corpus_dir.empty()) throw ConfigError("--corpus is required");
        if (out_dir.empty()) throw ConfigError("--out is required");
        if (asr_hyp.has_value() == asr_cmd.has_value()) throw ConfigError("give exactly one of --asr-hyp / --asr-cmd");
        if (pgc_hyp && pgc_cmd) throw ConfigError("give at most one of --pgc-hyp / --pgc-cmd");
        if (workers == 0) throw ConfigError("--workers must be positive");
        std::error_code ec;
        const auto a = std::filesystem::weakly_canonical(corpus_dir, ec);
        const auto b = std::filesystem::weakly_canonical(out_dir, ec);
        if (a == b) throw ConfigError("--out must differ from --corpus");
    }
};

struct CorpusEntry {
    std::string name;
    std::filesystem::path audio;
    std::filesystem::path transcript;
    std::optional<std::filesystem::path> meta;
};

// Recordings that have a transcript in the requested format, sorted by name.
inline std::vector<CorpusEntry> discover_corpus(const std::filesystem::path& dir, TranscriptFormat mode) {
    if (!std::filesystem::is_directory(dir)) throw CorpusError("corpus directory not found: " + dir.string());
    const char* ext = mode == TranscriptFormat::chat ? ".cha" : ".txt";
    std::vector<CorpusEntry> out;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (!e.is_regular_file() || e.path().extension() != ".wav") continue;
        CorpusEntry entry;
        entry.name = e.path().stem().string();
        entry.audio = e.path();
        entry.transcript = dir / (entry.name + ext);
        if (!std::filesystem::exists(entry.transcript)) continue;
        if (const auto meta = dir / (entry.name + ".meta.json"); std::filesystem::exists(meta)) entry.meta = meta;
        out.push_back(std::move(entry));
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
    if (out.empty()) {
        throw CorpusError("no <name>.wav with a matching " + std::string(ext) + " transcript in " + dir.string());
    }
    return out;
}

inline SpeakerMeta load_speaker_meta(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error&) {
        throw SchemaError(path.string() + ": invalid JSON");
    }
    return detail::speaker_from_json(j, path.string());
}

struct FileReport {
    std::string name;
    std::size_t utterances = 0;
    std::size_t aligned = 0;
    std::size_t verify = 0;
    std::size_t discarded = 0;
    std::size_t pgc_dropped = 0;
    std::size_t transcript_words = 0;
    std::optional<std::string> error;
};

struct RunReport {
    std::vector<FileReport> files;
    std::size_t utterances = 0;
    std::size_t aligned = 0; // after PGC
    std::size_t verify = 0;
    std::size_t discarded = 0;
    std::size_t pgc_dropped = 0;
    std::vector<std::string> pgc_missing;
    std::vector<std::string> warnings;
    double wall_time_s = 0.0;
};

inline nlohmann::ordered_json to_json(const RunReport& r) {
    nlohmann::ordered_json files = nlohmann::ordered_json::array();
    for (const auto& f : r.files) {
        nlohmann::ordered_json j = {{"name", f.name},
                                    {"utterances", f.utterances},
                                    {"aligned", f.aligned},
                                    {"verify", f.verify},
                                    {"discarded", f.discarded},
                                    {"pgc_dropped", f.pgc_dropped},
                                    {"transcript_words", f.transcript_words}};
        if (f.error) j["error"] = *f.error;
        files.push_back(std::move(j));
    }
    return {{"tool_version", kToolVersion},
            {"utterances", r.utterances},
            {"aligned", r.aligned},
            {"verify", r.verify},
            {"discarded", r.discarded},
            {"pgc_dropped", r.pgc_dropped},
            {"pgc_missing", r.pgc_missing},
            {"warnings", r.warnings},
            {"wall_time_s", r.wall_time_s},
            {"files", std::move(files)}};
}

struct RunResult {
    Manifest manifest;
    std::vector<VerifyItem> verify_items;
    RunReport report;
};

using Logger = std::function<void(const std::string&)>;

inline Logger stderr_logger() {
    return [](const std::string& msg) { std::cerr << "fasa: " << msg << '\n'; };
}

namespace detail {

inline bool same_recording(const std::string& hyp_audio, const CorpusEntry& entry) {
    const std::filesystem::path p(hyp_audio);
    return p.filename() == entry.audio.filename() || p.stem().string() == entry.name;
}

inline std::string segment_rel_path(const std::string& id) { return "segments/" + id + ".wav"; }

// Second-round predictions for the cut segments of one file.
inline HypothesisSet second_round(const RunConfig& cfg, const HypothesisSet* pgc_file,
                                  const std::vector<AlignedItem>& aligned) {
    HypothesisSet out;
    if (pgc_file) return *pgc_file;
    if (!cfg.pgc_cmd) return out;
    for (const auto& item : aligned) {
        const auto seg = cfg.out_dir / segment_rel_path(item.utterance.id);
        const auto hs = run_external_asr(seg, *cfg.pgc_cmd, cfg.limits);
        Utterance u;
        u.id = item.utterance.id;
        for (const auto& s : hs.utterances) {
            u.pred_words.insert(u.pred_words.end(), s.pred_words.begin(), s.pred_words.end());
        }
        out.utterances.push_back(std::move(u));
    }
    return out;
}

} // namespace detail

// Runs stages 1-4 over every recording. Per-file failures are logged and the
// file skipped unless cfg.strict. Throws ConfigError / CorpusError for
// problems that stop the whole run.
inline RunResult run_align(const RunConfig& cfg, const Logger& log = stderr_logger()) {
    const auto t0 = std::chrono::steady_clock::now();
    cfg.validate();
    const auto entries = discover_corpus(cfg.corpus_dir, cfg.clean_mode);

    std::optional<HypothesisSet> asr_file;
    if (cfg.asr_hyp) asr_file = load_hypotheses(*cfg.asr_hyp, cfg.limits);
    std::optional<HypothesisSet> pgc_file;
    if (cfg.pgc_hyp) pgc_file = load_hypotheses(*cfg.pgc_hyp, cfg.limits);

    std::error_code ec;
    std::filesystem::create_directories(cfg.out_dir / "segments", ec);
    if (ec) throw IoError("cannot create " + (cfg.out_dir / "segments").string() + ": " + ec.message());

    RunResult result;
    result.manifest.thresholds = cfg.thresholds;
    std::string asr_id;

    std::set<std::string> claimed;
    for (const auto& entry : entries) {
        FileReport fr;
        fr.name = entry.name;
        std::vector<std::string> written;
        try {
            const auto raw = load_raw_transcript(entry.transcript, cfg.clean_mode);
            const auto transcript = clean(raw, cfg.clean_options);
            fr.transcript_words = transcript.size();
            const SpeakerMeta speaker = entry.meta ? load_speaker_meta(*entry.meta) : SpeakerMeta{};

            HypothesisSet hs;
            if (asr_file) {
                hs.asr_id = asr_file->asr_id;
                for (const auto& u : asr_file->utterances) {
                    if (detail::same_recording(u.audio_path, entry)) {
                        hs.utterances.push_back(u);
                        claimed.insert(u.id);
                    }
                }
            } else {
                hs = run_external_asr(entry.audio, *cfg.asr_cmd, cfg.limits);
                for (auto& u : hs.utterances) u.id = entry.name + "_" + u.id;
            }
            if (asr_id.empty()) asr_id = hs.asr_id;
            else if (!hs.asr_id.empty() && hs.asr_id != asr_id && asr_id.find(hs.asr_id) == std::string::npos) {
                asr_id += "," + hs.asr_id;
            }

            const auto outcome = align_all(hs, transcript, cfg.thresholds, cfg.workers);
            fr.utterances = hs.utterances.size();
            fr.verify = outcome.verify.size();
            fr.discarded = outcome.discarded.size();

            const WavAudio audio = load_wav(entry.audio);
            const std::string source_audio = entry.audio.filename().string();
            std::vector<std::pair<std::string, std::vector<std::uint8_t>>> cuts;
            for (const auto& item : outcome.align) {
                cuts.emplace_back(item.utterance.id, cut_segment(audio, item.utterance.start_s, item.utterance.end_s));
            }
            for (const auto& item : outcome.verify) {
                cuts.emplace_back(item.utterance.id, cut_segment(audio, item.utterance.start_s, item.utterance.end_s));
            }
            for (const auto& [id, bytes] : cuts) {
                detail::write_bytes_atomic(cfg.out_dir / detail::segment_rel_path(id), bytes);
                written.push_back(id);
            }

            std::vector<AlignedItem> kept = outcome.align;
            if (cfg.pgc_hyp || cfg.pgc_cmd) {
                const auto second = detail::second_round(cfg, pgc_file ? &*pgc_file : nullptr, outcome.align);
                auto pgc = pgc_filter(outcome.align, second, cfg.thresholds);
                fr.pgc_dropped = pgc.dropped.size();
                for (const auto& id : pgc.missing_ids) {
                    result.report.pgc_missing.push_back(id);
                    log("no second-round prediction for '" + id + "'; kept");
                }
                for (const auto& d : pgc.dropped) {
                    std::filesystem::remove(cfg.out_dir / detail::segment_rel_path(d.utterance.id), ec);
                }
                kept = std::move(pgc.kept);
            }
            fr.aligned = kept.size();

            for (const auto& item : kept) {
                const auto& u = item.utterance;
                result.manifest.records.push_back({u.id, detail::segment_rel_path(u.id), source_audio, u.start_s,
                                                   u.end_s, item.gt, RecordSource::automatic, speaker});
            }
            for (const auto& item : outcome.verify) {
                const auto& u = item.utterance;
                result.verify_items.push_back({u.id, detail::segment_rel_path(u.id), source_audio, u.start_s, u.end_s,
                                               item.gt, item.pred, item.match.wer, speaker});
            }
        } catch (const Error& e) {
            for (const auto& id : written) std::filesystem::remove(cfg.out_dir / detail::segment_rel_path(id), ec);
            if (cfg.strict) throw CorpusError(entry.name + ": " + e.what());
            fr = FileReport{entry.name, 0, 0, 0, 0, 0, 0, std::string(e.what())};
            log("skipping " + entry.name + ": " + e.what());
            result.report.warnings.push_back(entry.name + ": " + e.what());
        }
        result.report.utterances += fr.utterances;
        result.report.aligned += fr.aligned;
        result.report.verify += fr.verify;
        result.report.discarded += fr.discarded;
        result.report.pgc_dropped += fr.pgc_dropped;
        result.report.files.push_back(std::move(fr));
    }

    if (asr_file) {
        std::size_t orphans = 0;
        for (const auto& u : asr_file->utterances) orphans += !claimed.contains(u.id);
        if (orphans > 0) {
            const auto msg = std::to_string(orphans) + " hypothesis segment(s) name no recording in the corpus";
            log(msg);
            result.report.warnings.push_back(msg);
        }
    }

    result.manifest.asr_id = asr_id;
    emit_manifest(result.manifest, cfg.out_dir / "data_align.manifest.jsonl");
    emit_verify_items(result.verify_items, cfg.out_dir / "data_verify.jsonl");
    result.report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    detail::write_text_atomic(cfg.out_dir / "run_report.json", to_json(result.report).dump(2) + "\n");
    return result;
}

} // namespace fasa
