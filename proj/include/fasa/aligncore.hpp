#pragma once

// Sliding-window alignment of ASR utterances against a provided transcript.
//
// For every utterance the transcript is searched for the contiguous window
// with the smallest word-level edit distance to the prediction. The window's
// WER (window as reference, prediction as hypothesis) then sorts the
// utterance into one of three bins:
//
//   wer <  sigma_a            -> align   (window becomes the label)
//   sigma_a <= wer < sigma_i  -> verify  (queued for a human)
//   wer >= sigma_i            -> discard
//
// Two searches are provided. best_match() enumerates every window and calls
// dis() on each; it is the reference. best_match_fast() returns the same
// answer, bit for bit, in O(m * L * W) with pruning.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <ranges>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fasa/errors.hpp"
#include "fasa/hypothesis.hpp"
#include "fasa/transcript.hpp"

namespace fasa {

enum class PgcMetric { relative, absolute };

struct Thresholds {
    double sigma_a = 0.15;
    double sigma_i = 0.5;
    double pgc_rel = 0.2;
    double len_ratio_rho = 1.0;
    // Window lengths 2..L (the original loop bounds) instead of 1..ceil(rho*L).
    bool paper_strict_windows = false;
    PgcMetric pgc_metric = PgcMetric::relative;
    // Used only when pgc_metric == absolute: maximum tolerated word-count gap.
    std::size_t pgc_abs_words = 2;

    void validate() const {
        if (!(sigma_a >= 0.0 && sigma_a < 1.0)) throw ConfigError("sigma_a must lie in [0, 1)");
        if (!(sigma_i > 0.0 && sigma_i <= 1.0)) throw ConfigError("sigma_i must lie in (0, 1]");
        if (!(sigma_a < sigma_i)) throw ConfigError("sigma_a must be smaller than sigma_i");
        if (!(pgc_rel > 0.0 && pgc_rel <= 1.0)) throw ConfigError("pgc_rel must lie in (0, 1]");
        if (!(len_ratio_rho > 0.0) || !std::isfinite(len_ratio_rho)) throw ConfigError("rho must be positive");
    }

    // Longest admissible window for a prediction of `pred_len` words.
    std::size_t max_window(std::size_t pred_len) const {
        if (paper_strict_windows) return pred_len;
        const double scaled = len_ratio_rho * static_cast<double>(pred_len);
        return static_cast<std::size_t>(std::ceil(scaled - 1e-9));
    }

    std::size_t min_window() const { return paper_strict_windows ? 2 : 1; }
};

// ---------------------------------------------------------------------------
// Edit distance

// Word-level Levenshtein distance with unit costs. Works on any pair of
// random-access ranges whose elements compare with ==.
template <std::ranges::random_access_range A, std::ranges::random_access_range B>
std::size_t dis(const A& x, const B& y) {
    const auto n = static_cast<std::size_t>(std::ranges::size(x));
    const auto k = static_cast<std::size_t>(std::ranges::size(y));
    if (n == 0) return k;
    if (k == 0) return n;
    std::vector<std::size_t> row(k + 1);
    for (std::size_t j = 0; j <= k; ++j) row[j] = j;
    auto xi = std::ranges::begin(x);
    for (std::size_t i = 1; i <= n; ++i, ++xi) {
        std::size_t diag = row[0];
        row[0] = i;
        auto yj = std::ranges::begin(y);
        for (std::size_t j = 1; j <= k; ++j, ++yj) {
            const std::size_t up = row[j];
            const std::size_t sub = diag + (*xi == *yj ? 0 : 1);
            row[j] = std::min({sub, up + 1, row[j - 1] + 1});
            diag = up;
        }
    }
    return row[k];
}

// Word error rate of `hypothesis` against `reference`. An empty reference
// yields 0 for an empty hypothesis and +inf otherwise.
template <std::ranges::random_access_range A, std::ranges::random_access_range B>
double wer(const A& reference, const B& hypothesis) {
    const auto ref_len = static_cast<std::size_t>(std::ranges::size(reference));
    if (ref_len == 0) {
        return std::ranges::size(hypothesis) == 0 ? 0.0 : std::numeric_limits<double>::infinity();
    }
    return static_cast<double>(dis(reference, hypothesis)) / static_cast<double>(ref_len);
}

// ---------------------------------------------------------------------------
// Decisions

struct MatchResult {
    std::size_t best_start = 0; // 1-based index into the transcript
    std::size_t best_len = 0;
    std::size_t d_min = 0;
    double wer = 0.0;

    std::size_t last_index() const noexcept { return best_start + best_len - 1; }

    friend bool operator==(const MatchResult&, const MatchResult&) = default;
};

enum class Verdict { align, verify, discard };

inline const char* to_string(Verdict v) {
    switch (v) {
    case Verdict::align: return "align";
    case Verdict::verify: return "verify";
    case Verdict::discard: return "discard";
    }
    return "?";
}

struct AlignmentDecision {
    Verdict verdict = Verdict::discard;
    WordSeq gt;   // empty for discard
    WordSeq pred; // set for verify
    std::optional<MatchResult> match;

    friend bool operator==(const AlignmentDecision&, const AlignmentDecision&) = default;
};

inline Verdict classify(double wer_value, const Thresholds& th) {
    if (wer_value < th.sigma_a) return Verdict::align;
    if (wer_value < th.sigma_i) return Verdict::verify;
    return Verdict::discard;
}

namespace detail {

inline AlignmentDecision decide(std::span<const std::string> pred, const WordSeq& transcript,
                                std::optional<MatchResult> match, const Thresholds& th) {
    AlignmentDecision d;
    if (!match) return d;
    const auto first = transcript.begin() + static_cast<std::ptrdiff_t>(match->best_start - 1);
    WordSeq window(first, first + static_cast<std::ptrdiff_t>(match->best_len));
    match->wer = wer(window, pred);
    d.verdict = classify(match->wer, th);
    d.match = match;
    if (d.verdict != Verdict::discard) d.gt = std::move(window);
    if (d.verdict == Verdict::verify) d.pred.assign(pred.begin(), pred.end());
    return d;
}

} // namespace detail

// Reference search: every window T[a .. a+w-1], a ascending then w ascending,
// keeping the first strictly smaller distance.
inline AlignmentDecision best_match(std::span<const std::string> pred, const ProvidedTranscript& transcript,
                                    const Thresholds& th = {}) {
    const auto& words = transcript.words;
    const std::size_t m = words.size();
    const std::size_t len = pred.size();
    if (len == 0 || m == 0) return {};

    const std::size_t w_cap = th.max_window(len);
    const std::size_t w_min = th.min_window();
    std::optional<MatchResult> best;
    std::size_t d_min = std::numeric_limits<std::size_t>::max();
    for (std::size_t a = 0; a < m; ++a) {
        const std::size_t w_max = std::min(w_cap, m - a);
        for (std::size_t w = w_min; w <= w_max; ++w) {
            const std::span<const std::string> window(words.data() + a, w);
            const std::size_t d = dis(pred, window);
            if (d < d_min) {
                d_min = d;
                best = MatchResult{a + 1, w, d, 0.0};
            }
        }
    }
    return detail::decide(pred, words, best, th);
}

// Transcript words interned to integers, shared by every utterance that is
// matched against the same transcript.
class TranscriptIndex {
public:
    explicit TranscriptIndex(const ProvidedTranscript& transcript) : transcript_(&transcript) {
        ids_.reserve(transcript.words.size());
        for (const auto& w : transcript.words) {
            const auto [it, inserted] = dict_.try_emplace(w, static_cast<std::uint32_t>(dict_.size()));
            ids_.push_back(it->second);
        }
    }

    const ProvidedTranscript& transcript() const noexcept { return *transcript_; }
    const std::vector<std::uint32_t>& ids() const noexcept { return ids_; }
    std::size_t vocabulary_size() const noexcept { return dict_.size(); }

    // Words absent from the transcript get ids past the vocabulary; they can
    // never match a transcript word.
    std::vector<std::uint32_t> encode(std::span<const std::string> words) const {
        std::vector<std::uint32_t> out;
        out.reserve(words.size());
        auto next_unknown = static_cast<std::uint32_t>(dict_.size());
        for (const auto& w : words) {
            const auto it = dict_.find(w);
            out.push_back(it != dict_.end() ? it->second : next_unknown++);
        }
        return out;
    }

private:
    const ProvidedTranscript* transcript_;
    std::unordered_map<std::string, std::uint32_t> dict_;
    std::vector<std::uint32_t> ids_;
};

struct FastSearchOptions {
    // Skip anchors whose bag-of-words bound already rules out a strict
    // improvement. Exact: never changes the result.
    bool prune = true;
};

// Same contract as best_match(). Per anchor, one DP table of the prediction
// against T[a .. a+W-1] is filled column by column; the bottom cell of column
// w is dis(pred, T[a .. a+w-1]), so all window lengths cost one pass.
//
// Pruning is exact because best_match() only ever replaces its incumbent on a
// strictly smaller distance:
//  * anchor bound: any window at a has dis >= L - C(a), where C(a) is the
//    multiset overlap between pred and T[a .. a+W-1]; if that is >= the
//    incumbent, anchor a cannot win.
//  * column bound: dis for every longer window at a is >= the column minimum,
//    so the sweep stops once that minimum reaches the incumbent.
inline AlignmentDecision best_match_fast(std::span<const std::string> pred, const TranscriptIndex& index,
                                         const Thresholds& th = {}, const FastSearchOptions& opts = {}) {
    const auto& words = index.transcript().words;
    const auto& t = index.ids();
    const std::size_t m = t.size();
    const std::size_t len = pred.size();
    if (len == 0 || m == 0) return {};

    const std::vector<std::uint32_t> p = index.encode(pred);
    const std::size_t w_cap = th.max_window(len);
    const std::size_t w_min = th.min_window();

    // Overlap bookkeeping: distinct prediction words that occur in T get a
    // slot; window counts are kept per slot.
    std::unordered_map<std::uint32_t, std::size_t> slot_of;
    std::vector<int> need;
    for (auto id : p) {
        if (id >= index.vocabulary_size()) continue;
        const auto [it, inserted] = slot_of.try_emplace(id, need.size());
        if (inserted) need.push_back(0);
        ++need[it->second];
    }
    std::vector<int> have(need.size(), 0);
    std::size_t overlap = 0;
    auto slot = [&](std::uint32_t id) -> long {
        if (slot_of.empty()) return -1;
        const auto it = slot_of.find(id);
        return it == slot_of.end() ? -1 : static_cast<long>(it->second);
    };
    auto add = [&](std::uint32_t id) {
        const long s = slot(id);
        if (s < 0) return;
        if (have[static_cast<std::size_t>(s)]++ < need[static_cast<std::size_t>(s)]) ++overlap;
    };
    auto remove = [&](std::uint32_t id) {
        const long s = slot(id);
        if (s < 0) return;
        if (--have[static_cast<std::size_t>(s)] < need[static_cast<std::size_t>(s)]) --overlap;
    };
    std::size_t window_end = 0; // exclusive end of the counted range
    for (; window_end < std::min(w_cap, m); ++window_end) add(t[window_end]);

    std::vector<std::size_t> col(len + 1);
    std::optional<MatchResult> best;
    std::size_t d_min = std::numeric_limits<std::size_t>::max();

    for (std::size_t a = 0; a < m; ++a) {
        if (a > 0) {
            remove(t[a - 1]);
            if (window_end < m) add(t[window_end++]);
        }
        const std::size_t w_max = std::min(w_cap, m - a);
        if (w_max < w_min) continue;
        if (opts.prune && best && len - std::min(len, overlap) >= d_min) continue;

        for (std::size_t i = 0; i <= len; ++i) col[i] = i;
        for (std::size_t w = 1; w <= w_max; ++w) {
            const std::uint32_t tw = t[a + w - 1];
            std::size_t diag = col[0];
            col[0] = w;
            std::size_t col_min = col[0];
            for (std::size_t i = 1; i <= len; ++i) {
                const std::size_t left = col[i];
                const std::size_t v = std::min({diag + (p[i - 1] == tw ? 0 : 1), left + 1, col[i - 1] + 1});
                diag = left;
                col[i] = v;
                col_min = std::min(col_min, v);
            }
            if (w >= w_min && col[len] < d_min) {
                d_min = col[len];
                best = MatchResult{a + 1, w, d_min, 0.0};
            }
            if (opts.prune && col_min >= d_min) break;
        }
    }
    return detail::decide(pred, words, best, th);
}

inline AlignmentDecision best_match_fast(std::span<const std::string> pred, const ProvidedTranscript& transcript,
                                         const Thresholds& th = {}, const FastSearchOptions& opts = {}) {
    return best_match_fast(pred, TranscriptIndex(transcript), th, opts);
}

// ---------------------------------------------------------------------------
// Whole hypothesis sets

struct AlignedItem {
    Utterance utterance;
    WordSeq gt;
    MatchResult match;
};

struct VerifyCandidate {
    Utterance utterance;
    WordSeq gt;
    WordSeq pred;
    MatchResult match;
};

struct AlignOutcome {
    std::vector<AlignedItem> align;
    std::vector<VerifyCandidate> verify;
    std::vector<std::string> discarded;
    // One entry per input utterance, in input order.
    std::vector<AlignmentDecision> decisions;
};

// Classifies every utterance independently. Windows may be reused by several
// utterances. Output order follows input order for any worker count.
inline AlignOutcome align_all(const HypothesisSet& hs, const ProvidedTranscript& transcript, const Thresholds& th = {},
                              unsigned workers = 1) {
    const TranscriptIndex index(transcript);
    const std::size_t n = hs.utterances.size();
    AlignOutcome out;
    out.decisions.resize(n);

    auto work = [&](std::size_t k) {
        out.decisions[k] = best_match_fast(hs.utterances[k].pred_words, index, th);
    };
    workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
    if (workers == 1) {
        for (std::size_t k = 0; k < n; ++k) work(k);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t k = next++; k < n; k = next++) work(k);
            });
        }
    }

    for (std::size_t k = 0; k < n; ++k) {
        const auto& d = out.decisions[k];
        const auto& u = hs.utterances[k];
        switch (d.verdict) {
        case Verdict::align: out.align.push_back({u, d.gt, *d.match}); break;
        case Verdict::verify: out.verify.push_back({u, d.gt, d.pred, *d.match}); break;
        case Verdict::discard: out.discarded.push_back(u.id); break;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Post-generation check

struct PgcResult {
    std::vector<AlignedItem> kept;
    std::vector<AlignedItem> dropped;
    // Aligned ids with no second-round prediction; these are kept.
    std::vector<std::string> missing_ids;
};

inline bool pgc_rejects(std::size_t gt_len, std::size_t pred2_len, const Thresholds& th) {
    const std::size_t gap = gt_len > pred2_len ? gt_len - pred2_len : pred2_len - gt_len;
    if (th.pgc_metric == PgcMetric::absolute) return gap > th.pgc_abs_words;
    return static_cast<double>(gap) / static_cast<double>(std::max<std::size_t>(gt_len, 1)) > th.pgc_rel;
}

inline PgcResult pgc_filter(const std::vector<AlignedItem>& aligned, const HypothesisSet& second_round,
                            const Thresholds& th = {}) {
    std::unordered_map<std::string, const Utterance*> by_id;
    for (const auto& u : second_round.utterances) by_id.emplace(u.id, &u);

    PgcResult out;
    for (const auto& item : aligned) {
        const auto it = by_id.find(item.utterance.id);
        if (it == by_id.end()) {
            out.missing_ids.push_back(item.utterance.id);
            out.kept.push_back(item);
            continue;
        }
        if (pgc_rejects(item.gt.size(), it->second->pred_words.size(), th)) out.dropped.push_back(item);
        else out.kept.push_back(item);
    }
    return out;
}

} // namespace fasa
