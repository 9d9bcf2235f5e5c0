#pragma once

// Transcript loading and cleaning.
//
// A raw transcription (plain text or a CHAT main-tier file) is reduced to the
// canonical word sequence the aligner works on. Every emitted word remembers
// the byte range it came from, so a matched window can always be traced back
// to the original file.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fasa/errors.hpp"

namespace fasa {

using WordSeq = std::vector<std::string>;

enum class TranscriptFormat { plain, chat };

struct RawTranscript {
    std::filesystem::path source_path;
    std::string text;
    TranscriptFormat format_hint = TranscriptFormat::plain;
};

// Half-open byte range [begin, end) into RawTranscript::text.
struct ByteSpan {
    std::size_t begin = 0;
    std::size_t end = 0;

    friend bool operator==(const ByteSpan&, const ByteSpan&) = default;
};

struct ProvidedTranscript {
    WordSeq words;
    std::vector<ByteSpan> spans;

    std::size_t size() const noexcept { return words.size(); }
    bool empty() const noexcept { return words.empty(); }
};

struct CleanOptions {
    // Strict mode (false) drops apostrophes too, leaving pure alphanumerics.
    bool keep_apostrophes = true;
};

namespace detail {

enum class CharClass { word, apostrophe, separator };

struct DecodedChar {
    char32_t cp = 0;
    std::size_t len = 1;
    bool valid = true;
};

inline DecodedChar decode_utf8(std::string_view s, std::size_t i) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    if (b0 < 0x80) return {b0, 1, true};
    std::size_t len = 0;
    char32_t cp = 0;
    if ((b0 & 0xE0) == 0xC0) {
        len = 2;
        cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
        len = 3;
        cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
        len = 4;
        cp = b0 & 0x07;
    } else {
        return {0xFFFD, 1, false};
    }
    if (i + len > s.size()) return {0xFFFD, 1, false};
    for (std::size_t k = 1; k < len; ++k) {
        const auto b = static_cast<unsigned char>(s[i + k]);
        if ((b & 0xC0) != 0x80) return {0xFFFD, 1, false};
        cp = (cp << 6) | (b & 0x3F);
    }
    // Reject overlong forms and surrogates.
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000) ||
        (cp >= 0xD800 && cp <= 0xDFFF) || cp > 0x10FFFF) {
        return {0xFFFD, 1, false};
    }
    return {cp, len, true};
}

// Non-ASCII code points treated as punctuation/whitespace. Everything else
// outside ASCII passes through as part of a word.
inline bool is_unicode_separator(char32_t cp) {
    return (cp >= 0x80 && cp <= 0xBF) ||      // C1 controls, NBSP, Latin-1 punctuation
           cp == 0xD7 || cp == 0xF7 ||        // multiplication / division signs
           (cp >= 0x2000 && cp <= 0x206F) ||  // general punctuation (dashes, quotes, ...)
           (cp >= 0x20A0 && cp <= 0x20CF) ||  // currency
           (cp >= 0x2190 && cp <= 0x2BFF) ||  // arrows, math, box drawing, symbols
           (cp >= 0x2E00 && cp <= 0x2E7F) ||  // supplemental punctuation
           (cp >= 0x3000 && cp <= 0x303F) ||  // CJK punctuation
           (cp >= 0xFE30 && cp <= 0xFE4F) || (cp >= 0xFF00 && cp <= 0xFF0F) ||
           cp == 0xFEFF || cp == 0xFFFD;
}

inline bool is_apostrophe(char32_t cp) { return cp == U'\'' || cp == 0x2019 || cp == 0x02BC; }

inline CharClass classify(const DecodedChar& c) {
    if (!c.valid) return CharClass::separator;
    if (is_apostrophe(c.cp)) return CharClass::apostrophe;
    if (c.cp < 0x80) {
        const auto ch = static_cast<char>(c.cp);
        const bool alnum = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9');
        return alnum ? CharClass::word : CharClass::separator;
    }
    return is_unicode_separator(c.cp) ? CharClass::separator : CharClass::word;
}

} // namespace detail

// Normalizes one run of non-separator bytes into a token: ASCII lowercase,
// apostrophe variants folded to '\'' (or dropped in strict mode), and
// leading/trailing apostrophes trimmed. Separator bytes inside `bytes` are
// skipped. May return an empty string.
inline std::string normalize_token(std::string_view bytes, const CleanOptions& opts = {}) {
    std::string out;
    out.reserve(bytes.size());
    for (std::size_t i = 0; i < bytes.size();) {
        const auto c = detail::decode_utf8(bytes, i);
        switch (detail::classify(c)) {
        case detail::CharClass::word:
            if (c.cp < 0x80) {
                char ch = static_cast<char>(c.cp);
                if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
                out.push_back(ch);
            } else {
                out.append(bytes.substr(i, c.len));
            }
            break;
        case detail::CharClass::apostrophe:
            if (opts.keep_apostrophes) out.push_back('\'');
            break;
        case detail::CharClass::separator:
            break;
        }
        i += c.len;
    }
    const auto first = out.find_first_not_of('\'');
    if (first == std::string::npos) return {};
    const auto last = out.find_last_not_of('\'');
    return out.substr(first, last - first + 1);
}

namespace detail {

// `text` may be a masked copy of the raw bytes; masking preserves length, so
// spans are valid against the original.
inline ProvidedTranscript tokenize(std::string_view text, const CleanOptions& opts) {
    ProvidedTranscript out;
    std::size_t i = 0;
    while (i < text.size()) {
        auto c = decode_utf8(text, i);
        if (classify(c) == CharClass::separator) {
            i += c.len;
            continue;
        }
        const std::size_t run_begin = i;
        while (i < text.size()) {
            c = decode_utf8(text, i);
            if (classify(c) == CharClass::separator) break;
            i += c.len;
        }
        // Narrow the span to exclude boundary apostrophes.
        std::size_t b = run_begin;
        std::size_t e = i;
        while (b < e) {
            const auto d = decode_utf8(text, b);
            if (classify(d) != CharClass::apostrophe) break;
            b += d.len;
        }
        while (e > b) {
            std::size_t k = e - 1;
            while (k > b && (static_cast<unsigned char>(text[k]) & 0xC0) == 0x80) --k;
            if (classify(decode_utf8(text, k)) != CharClass::apostrophe) break;
            e = k;
        }
        if (b == e) continue;
        auto token = normalize_token(text.substr(b, e - b), opts);
        if (token.empty()) continue;
        out.words.push_back(std::move(token));
        out.spans.push_back({b, e});
    }
    return out;
}

inline void blank(std::string& s, std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end && k < s.size(); ++k) {
        if (s[k] != '\n') s[k] = ' ';
    }
}

// Masks a CHAT main-tier line body in place (from `begin` to `end`).
inline void mask_chat_content(std::string& s, std::size_t begin, std::size_t end) {
    std::size_t k = begin;
    while (k < end) {
        const char ch = s[k];
        if (ch == '[') {
            const auto close = s.find(']', k);
            const std::size_t stop = (close == std::string::npos || close >= end) ? end : close + 1;
            blank(s, k, stop);
            k = stop;
        } else if (ch == '\x15') {
            // Media bullet: \x15start_end\x15
            const auto close = s.find('\x15', k + 1);
            const std::size_t stop = (close == std::string::npos || close >= end) ? end : close + 1;
            blank(s, k, stop);
            k = stop;
        } else if (ch == '<' || ch == '>') {
            s[k] = ' ';
            ++k;
        } else {
            ++k;
        }
    }
}

} // namespace detail

inline ProvidedTranscript clean_plain(const RawTranscript& raw, const CleanOptions& opts = {}) {
    return detail::tokenize(raw.text, opts);
}

// CHAT main tiers only. Speaker prefixes, bracketed codes and media bullets
// are blanked out (same byte length) before the plain rule runs, so spans still
// index the raw text.
inline ProvidedTranscript clean_chat(const RawTranscript& raw, const CleanOptions& opts = {}) {
    std::string masked = raw.text;
    bool in_main_tier = false;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < masked.size()) {
        ++line_no;
        auto eol = masked.find('\n', pos);
        if (eol == std::string::npos) eol = masked.size();
        const char lead = masked[pos];
        if (lead == '*') {
            const auto colon = masked.find(':', pos);
            if (colon == std::string::npos || colon >= eol) {
                throw MalformedTier(raw.source_path.string() + ":" + std::to_string(line_no) +
                                    ": speaker tier without ':' separator");
            }
            detail::blank(masked, pos, colon + 1);
            detail::mask_chat_content(masked, colon + 1, eol);
            in_main_tier = true;
        } else if ((lead == '\t' || lead == ' ') && in_main_tier) {
            detail::mask_chat_content(masked, pos, eol);
        } else if (pos != eol && lead != '\r') {
            // %dependent tiers, @headers, continuation of those, stray text.
            detail::blank(masked, pos, eol);
            in_main_tier = false;
        }
        pos = eol + 1;
    }
    return detail::tokenize(masked, opts);
}

inline ProvidedTranscript clean(const RawTranscript& raw, const CleanOptions& opts = {}) {
    return raw.format_hint == TranscriptFormat::chat ? clean_chat(raw, opts) : clean_plain(raw, opts);
}

// Cleans free text (ASR output, reviewer input) with the plain rule.
inline WordSeq clean_words(std::string_view text, const CleanOptions& opts = {}) {
    return detail::tokenize(text, opts).words;
}

inline bool is_valid_utf8(std::string_view s) {
    for (std::size_t i = 0; i < s.size();) {
        const auto c = detail::decode_utf8(s, i);
        if (!c.valid) return false;
        i += c.len;
    }
    return true;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline RawTranscript load_raw_transcript(const std::filesystem::path& path, TranscriptFormat format) {
    RawTranscript raw{path, read_file(path), format};
    if (!is_valid_utf8(raw.text)) throw SchemaError(path.string() + ": transcript is not valid UTF-8");
    return raw;
}

inline std::string join_words(const WordSeq& words, std::string_view sep = " ") {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) out.append(sep);
        out.append(words[i]);
    }
    return out;
}

inline std::optional<TranscriptFormat> parse_transcript_format(std::string_view s) {
    if (s == "plain") return TranscriptFormat::plain;
    if (s == "chat") return TranscriptFormat::chat;
    return std::nullopt;
}

inline const char* to_string(TranscriptFormat f) { return f == TranscriptFormat::chat ? "chat" : "plain"; }

} // namespace fasa
