#pragma once

// Synthetic corpora with known ground truth, and the aligned-utterance (AU)
// and aligned-word (AW) error metrics used to score an emitted dataset.
//
// A corpus is one recording made of tone bursts (one per segment) separated
// by silence. Only the timing matters to the pipeline. Its transcript is the
// concatenation of the segment words, then corrupted:
//   prefix_drop_frac       leading segments missing from the transcript
//   untranscribed_frac     further random segments missing
//   block_shuffle          transcript blocks out of audio order
//   annotation_noise_rate  casing, punctuation and bracket codes that the
//                          cleaning step has to remove
// Predictions come from mock_asr() over the true segment words.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numbers>
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

namespace fasa {

struct SynthSpec {
    std::size_t segments = 100;
    std::size_t min_words = 7;
    std::size_t max_words = 14;
    std::size_t vocabulary = 400;

    double prefix_drop_frac = 0.0;
    bool block_shuffle = false;
    std::size_t shuffle_block_segments = 5;
    double annotation_noise_rate = 0.0;
    double untranscribed_frac = 0.0;

    double substitution_rate = 0.0;
    double insertion_rate = 0.0;
    double deletion_rate = 0.0;

    TranscriptFormat transcript_format = TranscriptFormat::plain;
    std::string name = "synth";

    void validate() const {
        auto frac = [](double v, const char* what) {
            if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string(what) + " must lie in [0, 1]");
        };
        frac(prefix_drop_frac, "prefix_drop_frac");
        frac(annotation_noise_rate, "annotation_noise_rate");
        frac(untranscribed_frac, "untranscribed_frac");
        frac(substitution_rate, "substitution_rate");
        frac(insertion_rate, "insertion_rate");
        frac(deletion_rate, "deletion_rate");
        if (prefix_drop_frac + untranscribed_frac > 1.0) {
            throw ConfigError("prefix_drop_frac + untranscribed_frac exceeds 1");
        }
        if (min_words == 0 || max_words < min_words) throw ConfigError("need 1 <= min_words <= max_words");
        if (vocabulary < 2) throw ConfigError("vocabulary must hold at least two words");
        if (shuffle_block_segments == 0) throw ConfigError("shuffle_block_segments must be positive");
        if (name.empty() || name.find('/') != std::string::npos) throw ConfigError("invalid corpus name");
    }
};

inline nlohmann::ordered_json to_json(const SynthSpec& s) {
    return {{"segments", s.segments},
            {"min_words", s.min_words},
            {"max_words", s.max_words},
            {"vocabulary", s.vocabulary},
            {"prefix_drop_frac", s.prefix_drop_frac},
            {"block_shuffle", s.block_shuffle},
            {"shuffle_block_segments", s.shuffle_block_segments},
            {"annotation_noise_rate", s.annotation_noise_rate},
            {"untranscribed_frac", s.untranscribed_frac},
            {"substitution_rate", s.substitution_rate},
            {"insertion_rate", s.insertion_rate},
            {"deletion_rate", s.deletion_rate},
            {"transcript_format", to_string(s.transcript_format)},
            {"name", s.name}};
}

// Reads a corruption/generator spec; absent keys keep their defaults.
inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("synth spec must be a JSON object");
    SynthSpec s;
    try {
        auto get = [&](const char* key, auto& dst) {
            if (j.contains(key)) dst = j.at(key).get<std::remove_reference_t<decltype(dst)>>();
        };
        get("segments", s.segments);
        get("min_words", s.min_words);
        get("max_words", s.max_words);
        get("vocabulary", s.vocabulary);
        get("prefix_drop_frac", s.prefix_drop_frac);
        get("block_shuffle", s.block_shuffle);
        get("shuffle_block_segments", s.shuffle_block_segments);
        get("annotation_noise_rate", s.annotation_noise_rate);
        get("untranscribed_frac", s.untranscribed_frac);
        get("substitution_rate", s.substitution_rate);
        get("insertion_rate", s.insertion_rate);
        get("deletion_rate", s.deletion_rate);
        get("name", s.name);
        if (j.contains("transcript_format")) {
            const auto f = parse_transcript_format(j.at("transcript_format").get<std::string>());
            if (!f) throw ConfigError("transcript_format must be plain or chat");
            s.transcript_format = *f;
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("synth spec: ") + e.what());
    }
    for (const auto& [key, value] : j.items()) {
        if (!to_json(SynthSpec{}).contains(key)) throw ConfigError("synth spec: unknown key '" + key + "'");
    }
    s.validate();
    return s;
}

enum class SegmentFate { transcribed, prefix_dropped, untranscribed };

struct SynthSegment {
    std::string id;
    WordSeq words;
    double start_s = 0.0;
    double end_s = 0.0;
    SegmentFate fate = SegmentFate::transcribed;
};

// utterance id -> correct word sequence
using GoldAnnotation = std::map<std::string, WordSeq>;

struct SynthCorpus {
    SynthSpec spec;
    std::uint64_t seed = 0;
    std::string audio_name;      // e.g. synth.wav
    std::vector<SynthSegment> truth_segments;
    WordSeq full_transcript;     // after dropping/shuffling, before annotation noise
    std::string transcript_text; // what goes into the transcript file
    SpeakerMeta speaker;
    std::vector<std::uint8_t> wav;
};

struct SynthOutput {
    SynthCorpus corpus;
    HypothesisSet hypotheses;
    GoldAnnotation gold;
};

namespace detail {

inline const std::vector<std::string>& truth_syllables() {
    static const std::vector<std::string> s = [] {
        std::vector<std::string> out;
        for (const char* c : {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v"}) {
            for (const char* v : {"a", "e", "i", "o", "u"}) out.push_back(std::string(c) + v);
        }
        return out;
    }();
    return s;
}

// Pseudo-words drawn from syllables; consonants here never occur in the
// replacement vocabulary, so the two sets are disjoint.
inline WordSeq make_vocabulary(std::size_t size, Rng& rng) {
    const auto& syl = truth_syllables();
    std::set<std::string> seen;
    WordSeq vocab;
    while (vocab.size() < size) {
        const std::size_t n = 1 + rng.below(3);
        std::string w;
        for (std::size_t k = 0; k < n; ++k) w += syl[rng.below(syl.size())];
        if (seen.insert(w).second) vocab.push_back(std::move(w));
    }
    return vocab;
}

inline WordSeq replacement_vocabulary() {
    WordSeq out;
    for (const char* c : {"z", "x", "j", "w", "h"}) {
        for (const char* v : {"a", "e", "i", "o", "u"}) {
            for (const char* c2 : {"z", "x", "j"}) out.push_back(std::string(c) + v + c2);
        }
    }
    return out;
}

inline std::string decorate(const std::string& word, Rng& rng) {
    static const char* const codes[] = {" [*]", " [/]", " [//]", ",", ".", "!", "?", " (.)", " +..."};
    std::string out = word;
    switch (rng.below(3)) {
    case 0: out[0] = static_cast<char>(out[0] - 'a' + 'A'); break;
    case 1: out += codes[rng.below(std::size(codes))]; break;
    default: out = "<" + out + ">"; break;
    }
    return out;
}

} // namespace detail

inline SynthOutput generate(const SynthSpec& spec, std::uint64_t seed) {
    spec.validate();
    detail::Rng rng(seed);
    SynthOutput out;
    auto& corpus = out.corpus;
    corpus.spec = spec;
    corpus.seed = seed;
    corpus.audio_name = spec.name + ".wav";
    corpus.speaker = {spec.name + "_chi", 60.0, "F", "none"};

    const WordSeq vocab = detail::make_vocabulary(spec.vocabulary, rng);
    const std::size_t n = spec.segments;

    // Timing in whole milliseconds; gaps of silence around every segment.
    constexpr std::int64_t gap_ms = 300;
    std::int64_t cursor_ms = gap_ms;
    for (std::size_t k = 0; k < n; ++k) {
        SynthSegment seg;
        char id[32];
        std::snprintf(id, sizeof id, "%s_%04zu", spec.name.c_str(), k);
        seg.id = id;
        const std::size_t len = spec.min_words + rng.below(spec.max_words - spec.min_words + 1);
        for (std::size_t w = 0; w < len; ++w) seg.words.push_back(vocab[rng.below(vocab.size())]);
        const std::int64_t dur_ms = 200 + 280 * static_cast<std::int64_t>(len) + static_cast<std::int64_t>(rng.below(200));
        seg.start_s = static_cast<double>(cursor_ms) / 1000.0;
        seg.end_s = static_cast<double>(cursor_ms + dur_ms) / 1000.0;
        cursor_ms += dur_ms + gap_ms + static_cast<std::int64_t>(rng.below(300));
        corpus.truth_segments.push_back(std::move(seg));
    }

    const auto dropped = static_cast<std::size_t>(std::llround(spec.prefix_drop_frac * static_cast<double>(n)));
    for (std::size_t k = 0; k < dropped; ++k) corpus.truth_segments[k].fate = SegmentFate::prefix_dropped;
    auto untranscribed = static_cast<std::size_t>(std::llround(spec.untranscribed_frac * static_cast<double>(n)));
    untranscribed = std::min(untranscribed, n - dropped);
    {
        std::vector<std::size_t> pool;
        for (std::size_t k = dropped; k < n; ++k) pool.push_back(k);
        for (std::size_t k = 0; k < untranscribed; ++k) {
            const std::size_t pick = k + rng.below(pool.size() - k);
            std::swap(pool[k], pool[pick]);
            corpus.truth_segments[pool[k]].fate = SegmentFate::untranscribed;
        }
    }

    // Transcript blocks, optionally shuffled.
    std::vector<std::vector<std::size_t>> blocks;
    for (std::size_t k = 0; k < n; ++k) {
        if (corpus.truth_segments[k].fate != SegmentFate::transcribed) continue;
        if (blocks.empty() || blocks.back().size() == spec.shuffle_block_segments) blocks.emplace_back();
        blocks.back().push_back(k);
    }
    if (spec.block_shuffle) {
        for (std::size_t k = blocks.size(); k > 1; --k) std::swap(blocks[k - 1], blocks[rng.below(k)]);
    }

    std::string text;
    if (spec.transcript_format == TranscriptFormat::chat) {
        text += "@Begin\n@Languages:\teng\n@Participants:\tCHI Target_Child\n";
    }
    for (const auto& block : blocks) {
        for (std::size_t k : block) {
            const auto& seg = corpus.truth_segments[k];
            std::string line;
            for (const auto& w : seg.words) {
                corpus.full_transcript.push_back(w);
                if (!line.empty()) line += ' ';
                line += rng.chance(spec.annotation_noise_rate) ? detail::decorate(w, rng) : w;
            }
            if (spec.transcript_format == TranscriptFormat::chat) {
                text += "*CHI:\t" + line + " .\n%com:\tsegment " + seg.id + "\n";
            } else {
                text += line + "\n";
            }
        }
    }
    if (spec.transcript_format == TranscriptFormat::chat) text += "@End\n";
    corpus.transcript_text = std::move(text);

    // Audio: a tone per segment, silence elsewhere.
    const std::size_t total_samples = static_cast<std::size_t>(cursor_ms) * kSampleRate / 1000;
    std::vector<std::int16_t> samples(total_samples, 0);
    for (std::size_t k = 0; k < n; ++k) {
        const auto& seg = corpus.truth_segments[k];
        const std::size_t first = sample_index(seg.start_s);
        const std::size_t last = std::min(sample_index(seg.end_s), total_samples);
        const double freq = 180.0 + 20.0 * static_cast<double>(k % 16);
        for (std::size_t s = first; s < last; ++s) {
            const double t = static_cast<double>(s - first) / kSampleRate;
            samples[s] = static_cast<std::int16_t>(std::lround(4000.0 * std::sin(2.0 * std::numbers::pi * freq * t)));
        }
    }
    corpus.wav = encode_wav(std::span<const std::int16_t>(samples));

    std::vector<TruthSegment> truth;
    for (const auto& seg : corpus.truth_segments) {
        truth.push_back({seg.id, corpus.audio_name, seg.words, seg.start_s, seg.end_s});
        out.gold.emplace(seg.id, seg.words);
    }
    NoiseSpec noise;
    noise.substitution_rate = spec.substitution_rate;
    noise.insertion_rate = spec.insertion_rate;
    noise.deletion_rate = spec.deletion_rate;
    noise.replacement_vocab = detail::replacement_vocabulary();
    noise.asr_id = "mock-asr";
    // Separate stream so the ASR noise does not shift with corpus layout.
    out.hypotheses = mock_asr(truth, noise, seed ^ 0x9e3779b97f4a7c15ULL);
    return out;
}

// Writes <name>.wav, the transcript (.txt or .cha), <name>.meta.json into
// `corpus_dir`, plus hypotheses.json, gold.jsonl and synth_spec.json into
// `aux_dir` (usually the same directory's parent or a sibling).
inline void write_synth(const SynthOutput& out, const std::filesystem::path& corpus_dir,
                        const std::filesystem::path& aux_dir) {
    std::error_code ec;
    std::filesystem::create_directories(corpus_dir, ec);
    std::filesystem::create_directories(aux_dir, ec);
    if (!std::filesystem::is_directory(corpus_dir) || !std::filesystem::is_directory(aux_dir)) {
        throw IoError("cannot create output directories under " + corpus_dir.string());
    }
    const auto& c = out.corpus;
    detail::write_bytes_atomic(corpus_dir / c.audio_name, c.wav);
    const char* ext = c.spec.transcript_format == TranscriptFormat::chat ? ".cha" : ".txt";
    detail::write_text_atomic(corpus_dir / (c.spec.name + ext), c.transcript_text);
    detail::write_text_atomic(corpus_dir / (c.spec.name + ".meta.json"), to_json(c.speaker).dump(2) + "\n");
    detail::write_text_atomic(aux_dir / "hypotheses.json", emit_hypotheses(out.hypotheses));

    std::string gold;
    for (const auto& [id, words] : out.gold) {
        gold += nlohmann::ordered_json{{"id", id}, {"words", words}}.dump();
        gold += '\n';
    }
    detail::write_text_atomic(aux_dir / "gold.jsonl", gold);

    nlohmann::ordered_json spec = to_json(c.spec);
    spec["seed"] = c.seed;
    detail::write_text_atomic(aux_dir / "synth_spec.json", spec.dump(2) + "\n");

    std::string fates;
    for (const auto& seg : c.truth_segments) {
        const char* f = seg.fate == SegmentFate::transcribed      ? "transcribed"
                        : seg.fate == SegmentFate::prefix_dropped ? "prefix_dropped"
                                                                  : "untranscribed";
        fates += nlohmann::ordered_json{{"id", seg.id}, {"fate", f}}.dump();
        fates += '\n';
    }
    detail::write_text_atomic(aux_dir / "fates.jsonl", fates);
}

inline GoldAnnotation load_gold(const std::filesystem::path& path) {
    GoldAnnotation gold;
    detail::for_each_jsonl_line(path, [&](const nlohmann::ordered_json& j, const std::string& where) {
        auto id = detail::field<std::string>(j, "id", where);
        auto words = detail::field<WordSeq>(j, "words", where);
        if (!gold.emplace(std::move(id), std::move(words)).second) throw IdCollision(where + ": duplicate gold id");
    });
    return gold;
}

// ---------------------------------------------------------------------------
// Metrics

struct AuError {
    std::size_t aligned = 0;
    std::size_t errors = 0;
    double rate = 0.0;
};

struct AwError {
    std::size_t aligned_words = 0;
    std::size_t errors = 0;
    double rate = 0.0;
};

inline double error_rate(std::size_t errors, std::size_t total) {
    return total == 0 ? 0.0 : static_cast<double>(errors) / static_cast<double>(total);
}

// Percentage with two decimals, e.g. 0.012345 -> "1.23%".
inline std::string format_percent(double rate) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%%", rate * 100.0);
    return buf;
}

namespace detail {

inline const WordSeq& gold_for(const GoldAnnotation& gold, const std::string& id) {
    const auto it = gold.find(id);
    if (it == gold.end()) throw MissingGold("no gold annotation for '" + id + "'");
    return it->second;
}

} // namespace detail

// An emitted utterance counts as an error when its transcript differs from
// gold in any way.
inline AuError au_error(const Manifest& emitted, const GoldAnnotation& gold) {
    AuError out;
    for (const auto& r : emitted.records) {
        ++out.aligned;
        if (r.transcript != detail::gold_for(gold, r.id)) ++out.errors;
    }
    out.rate = error_rate(out.errors, out.aligned);
    return out;
}

// Word errors: edit distance to gold, summed; denominator is the number of
// emitted transcript words.
inline AwError aw_error(const Manifest& emitted, const GoldAnnotation& gold) {
    AwError out;
    for (const auto& r : emitted.records) {
        out.aligned_words += r.transcript.size();
        out.errors += dis(detail::gold_for(gold, r.id), r.transcript);
    }
    out.rate = error_rate(out.errors, out.aligned_words);
    return out;
}

} // namespace fasa
