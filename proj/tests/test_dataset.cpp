#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "fasa/dataset.hpp"
#include "support.hpp"

using fasa::DecisionAction;
using fasa::Manifest;
using fasa::RecordSource;
using fasa::SegmentRecord;
using fasa::VerifyDecision;
using fasa::VerifyItem;
using fasa::WordSeq;

namespace {

std::vector<std::int16_t> ramp(std::size_t n) {
    std::vector<std::int16_t> s(n);
    for (std::size_t k = 0; k < n; ++k) s[k] = static_cast<std::int16_t>((k * 7919) % 65536 - 32768);
    return s;
}

std::vector<std::uint8_t> le_bytes(std::span<const std::int16_t> s) {
    std::vector<std::uint8_t> out;
    for (auto v : s) {
        out.push_back(static_cast<std::uint8_t>(static_cast<std::uint16_t>(v) & 0xff));
        out.push_back(static_cast<std::uint8_t>(static_cast<std::uint16_t>(v) >> 8));
    }
    return out;
}

// Hand-built header so the parser is not only fed its own encoder's output.
std::vector<std::uint8_t> wav_with(std::uint16_t format, std::uint16_t channels, std::uint32_t rate,
                                   std::uint16_t bits, std::size_t data_bytes, bool extra_chunk = false) {
    std::vector<std::uint8_t> out;
    auto put = [&](std::uint32_t v, int n) {
        for (int k = 0; k < n; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
    };
    auto tag = [&](const char* t) { out.insert(out.end(), t, t + 4); };
    tag("RIFF");
    put(0, 4); // size patched below
    tag("WAVE");
    if (extra_chunk) {
        tag("LIST");
        put(3, 4);
        out.insert(out.end(), {'a', 'b', 'c', 0}); // odd size plus pad byte
    }
    tag("fmt ");
    put(16, 4);
    put(format, 2);
    put(channels, 2);
    put(rate, 4);
    put(rate * channels * bits / 8, 4);
    put(channels * bits / 8, 2);
    put(bits, 2);
    tag("data");
    put(static_cast<std::uint32_t>(data_bytes), 4);
    out.resize(out.size() + data_bytes, 0x11);
    const auto riff = static_cast<std::uint32_t>(out.size() - 8);
    for (int k = 0; k < 4; ++k) out[4 + k] = static_cast<std::uint8_t>(riff >> (8 * k));
    return out;
}

SegmentRecord record(std::string id, double start, WordSeq words) {
    SegmentRecord r;
    r.id = std::move(id);
    r.audio_path = "segments/" + r.id + ".wav";
    r.source_audio = "rec.wav";
    r.start_s = start;
    r.end_s = start + 1.25;
    r.transcript = std::move(words);
    return r;
}

VerifyItem item(std::string id, WordSeq gt, WordSeq pred, double wer) {
    VerifyItem v;
    v.id = std::move(id);
    v.audio_path = "segments/" + v.id + ".wav";
    v.source_audio = "rec.wav";
    v.start_s = 4.0;
    v.end_s = 5.5;
    v.gt = std::move(gt);
    v.pred = std::move(pred);
    v.wer = wer;
    return v;
}

VerifyDecision decision(std::string id, DecisionAction a, std::string manual = {}) {
    return {std::move(id), a, std::move(manual), "2024-01-01T00:00:00Z"};
}

} // namespace

TEST(CutSegment, OneToThreeAndAHalfSeconds) {
    const auto samples = ramp(16000 * 5);
    const auto src = fasa::parse_wav(fasa::encode_wav(std::span<const std::int16_t>(samples)));
    const auto cut = fasa::parse_wav(fasa::cut_segment(src, 1.00, 3.50));
    EXPECT_EQ(cut.sample_count(), 40000u);
    const auto want = le_bytes(std::span<const std::int16_t>(samples).subspan(16000, 40000));
    EXPECT_EQ(cut.pcm, want);
}

TEST(CutSegment, FullDurationIsIdentity) {
    const auto samples = ramp(12345);
    const auto bytes = fasa::encode_wav(std::span<const std::int16_t>(samples));
    const auto src = fasa::parse_wav(bytes);
    const auto cut = fasa::cut_segment(src, 0.0, src.duration_s());
    EXPECT_EQ(cut, bytes);
}

TEST(CutSegment, RoundsHalfAwayFromZero) {
    // Exact binary halves at rate 4 so the product is a true .5.
    EXPECT_EQ(fasa::sample_index(0.125, 4), 1u);
    EXPECT_EQ(fasa::sample_index(0.375, 4), 2u);
    EXPECT_EQ(fasa::sample_index(0.374, 4), 1u);
    EXPECT_EQ(fasa::sample_index(3.5, 16000), 56000u);
}

TEST(CutSegment, OutOfRange) {
    const auto samples = ramp(16000);
    const auto src = fasa::parse_wav(fasa::encode_wav(std::span<const std::int16_t>(samples)));
    EXPECT_THROW(fasa::cut_segment(src, 0.5, 1.5), fasa::OutOfRange);
    EXPECT_THROW(fasa::cut_segment(src, 0.5, 0.5), fasa::OutOfRange);
    EXPECT_THROW(fasa::cut_segment(src, -0.1, 0.5), fasa::OutOfRange);
}

TEST(ParseWav, AcceptsOnlyMono16Bit16k) {
    EXPECT_NO_THROW(fasa::parse_wav(wav_with(1, 1, 16000, 16, 64)));
    EXPECT_NO_THROW(fasa::parse_wav(wav_with(1, 1, 16000, 16, 64, true)));
    EXPECT_THROW(fasa::parse_wav(wav_with(1, 2, 16000, 16, 64)), fasa::UnsupportedFormat);
    EXPECT_THROW(fasa::parse_wav(wav_with(1, 1, 44100, 16, 64)), fasa::UnsupportedFormat);
    EXPECT_THROW(fasa::parse_wav(wav_with(1, 1, 16000, 8, 64)), fasa::UnsupportedFormat);
    EXPECT_THROW(fasa::parse_wav(wav_with(3, 1, 16000, 16, 64)), fasa::UnsupportedFormat);
    const std::vector<std::uint8_t> junk = {'n', 'o', 'p', 'e'};
    EXPECT_THROW(fasa::parse_wav(junk), fasa::UnsupportedFormat);
}

TEST(ParseWav, SkipsUnknownChunks) {
    const auto a = fasa::parse_wav(wav_with(1, 1, 16000, 16, 64, true));
    EXPECT_EQ(a.pcm, std::vector<std::uint8_t>(64, 0x11));
}

TEST(CutSegment, ContiguousCutsConcatenateToSource) {
    std::mt19937_64 rng(9);
    const auto samples = ramp(16000 * 3 + 77);
    const auto src = fasa::parse_wav(fasa::encode_wav(std::span<const std::int16_t>(samples)));
    for (int iter = 0; iter < 20; ++iter) {
        std::vector<double> cuts = {0.0, src.duration_s()};
        for (int k = 0; k < 6; ++k) cuts.push_back(static_cast<double>(rng() % 1'000'000) / 1e6 * src.duration_s());
        std::sort(cuts.begin(), cuts.end());
        std::vector<std::uint8_t> joined;
        for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
            if (fasa::sample_index(cuts[k]) == fasa::sample_index(cuts[k + 1])) continue;
            const auto part = fasa::parse_wav(fasa::cut_segment(src, cuts[k], cuts[k + 1]));
            joined.insert(joined.end(), part.pcm.begin(), part.pcm.end());
        }
        ASSERT_EQ(joined, src.pcm);
    }
}

TEST(Manifest, EmptyManifestWritesSidecar) {
    fasa_test::TempDir dir;
    Manifest m;
    m.asr_id = "mock";
    fasa::emit_manifest(m, dir / "data.manifest.jsonl");
    EXPECT_EQ(fasa_test::slurp(dir / "data.manifest.jsonl"), "");
    const auto meta = nlohmann::json::parse(fasa_test::slurp(dir / "data.manifest.meta.json"));
    EXPECT_EQ(meta.at("tool_version"), fasa::kToolVersion);
    EXPECT_EQ(meta.at("thresholds").at("sigma_a"), 0.15);
    EXPECT_EQ(fasa::load_manifest(dir / "data.manifest.jsonl"), m);
}

TEST(Manifest, ThreeRecordRoundTrip) {
    fasa_test::TempDir dir;
    std::filesystem::create_directories(dir / "segments");
    Manifest m;
    m.asr_id = "whisper";
    m.thresholds.sigma_a = 0.1;
    m.records = {record("a", 0.1, {"the", "dog"}), record("b", 2.0 / 3.0, {"it's"}), record("c", 7.0, {"café"})};
    m.records[1].source = RecordSource::user_manual;
    m.records[2].source = RecordSource::user_selected;
    m.records[0].speaker = {"CHI1", 47.5, "F", std::nullopt};
    m.records[2].speaker.disorder = "SSD";
    for (const auto& r : m.records) fasa_test::write_text(dir / r.audio_path, "x");
    fasa::emit_manifest(m, dir / "m.jsonl");
    EXPECT_EQ(fasa::load_manifest(dir / "m.jsonl"), m);

    // Keys appear in the documented order.
    const auto text = fasa_test::slurp(dir / "m.jsonl");
    const auto first = text.substr(0, text.find('\n'));
    std::vector<std::size_t> pos;
    for (const char* key : {"\"id\"", "\"audio\"", "\"source_audio\"", "\"start_s\"", "\"end_s\"", "\"transcript\"",
                            "\"source\"", "\"speaker\""}) {
        pos.push_back(first.find(key));
    }
    EXPECT_TRUE(std::is_sorted(pos.begin(), pos.end()));
    EXPECT_NE(text.find("\"source\":\"user_manual\""), std::string::npos);
}

TEST(Manifest, AnyLinePrefixIsAManifest) {
    fasa_test::TempDir dir;
    std::filesystem::create_directories(dir / "segments");
    Manifest m;
    for (int k = 0; k < 5; ++k) m.records.push_back(record("r" + std::to_string(k), k, {"w" + std::to_string(k)}));
    for (const auto& r : m.records) fasa_test::write_text(dir / r.audio_path, "x");
    fasa::emit_manifest(m, dir / "m.jsonl");
    const auto text = fasa_test::slurp(dir / "m.jsonl");
    std::size_t cut = 0;
    for (std::size_t n = 0; n <= 5; ++n) {
        fasa_test::write_text(dir / "p.jsonl", text.substr(0, cut));
        const auto part = fasa::load_manifest(dir / "p.jsonl");
        ASSERT_EQ(part.records.size(), n);
        EXPECT_TRUE(std::equal(part.records.begin(), part.records.end(), m.records.begin()));
        cut = text.find('\n', cut) + 1;
    }
}

TEST(Manifest, MissingTranscriptNamesLine) {
    fasa_test::TempDir dir;
    fasa_test::write_text(dir / "m.jsonl",
                          R"({"id":"a","audio":"a.wav","source_audio":"s.wav","start_s":0,"end_s":1,"transcript":["x"],"source":"auto"})"
                          "\n"
                          R"({"id":"b","audio":"b.wav","source_audio":"s.wav","start_s":1,"end_s":2,"source":"auto"})"
                          "\n");
    try {
        fasa::load_manifest(dir / "m.jsonl");
        FAIL() << "expected SchemaError";
    } catch (const fasa::SchemaError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("m.jsonl:2"), std::string::npos) << msg;
        EXPECT_NE(msg.find("transcript"), std::string::npos) << msg;
    }
}

TEST(Manifest, EmitChecksIdsAndAudio) {
    fasa_test::TempDir dir;
    Manifest m;
    m.records = {record("a", 0, {"x"})};
    EXPECT_THROW(fasa::emit_manifest(m, dir / "m.jsonl"), fasa::IoError);
    EXPECT_NO_THROW(fasa::emit_manifest(m, dir / "m.jsonl", {.require_audio = false}));
    m.records.push_back(record("a", 3, {"y"}));
    EXPECT_THROW(fasa::emit_manifest(m, dir / "m.jsonl", {.require_audio = false}), fasa::IdCollision);
}

TEST(VerifyItems, RoundTrip) {
    fasa_test::TempDir dir;
    std::vector<VerifyItem> items = {item("v1", {"a", "b"}, {"a", "c"}, 0.5), item("v2", {"x"}, {}, 1.0)};
    items[0].speaker.age_months = 30;
    fasa::emit_verify_items(items, dir / "data_verify.jsonl");
    EXPECT_EQ(fasa::load_verify_items(dir / "data_verify.jsonl"), items);
}

TEST(MergeDecisions, RejectAllIsIdentity) {
    Manifest base;
    base.records = {record("a", 0, {"hi"})};
    const std::vector<VerifyItem> queue = {item("v1", {"x"}, {"y"}, 0.2), item("v2", {"p"}, {"q"}, 0.3)};
    const auto out =
        fasa::merge_decisions(base, queue, {decision("v1", DecisionAction::reject), decision("v2", DecisionAction::reject)});
    EXPECT_EQ(out, base);
}

TEST(MergeDecisions, OneAcceptGtAddsOneRecord) {
    Manifest base;
    base.records = {record("a", 0, {"hi"})};
    const std::vector<VerifyItem> queue = {item("v1", {"the", "frog"}, {"a", "frog"}, 0.5)};
    const auto out = fasa::merge_decisions(base, queue, {decision("v1", DecisionAction::accept_gt)});
    ASSERT_EQ(out.records.size(), 2u);
    EXPECT_EQ(out.records[0], base.records[0]);
    EXPECT_EQ(out.records[1].transcript, (WordSeq{"the", "frog"}));
    EXPECT_EQ(out.records[1].source, RecordSource::user_selected);
    EXPECT_EQ(out.records[1].start_s, 4.0);
}

TEST(MergeDecisions, AcceptPredAndManual) {
    const std::vector<VerifyItem> queue = {item("v1", {"the", "frog"}, {"a", "frog"}, 0.5),
                                           item("v2", {"x"}, {"y"}, 0.4)};
    const auto out = fasa::merge_decisions(
        {}, queue, {decision("v1", DecisionAction::accept_pred), decision("v2", DecisionAction::manual, "The Frog!")});
    ASSERT_EQ(out.records.size(), 2u);
    EXPECT_EQ(out.records[0].transcript, (WordSeq{"a", "frog"}));
    EXPECT_EQ(out.records[1].transcript, (WordSeq{"the", "frog"}));
    EXPECT_EQ(out.records[1].source, RecordSource::user_manual);
}

TEST(MergeDecisions, Errors) {
    const std::vector<VerifyItem> queue = {item("v1", {"x"}, {"y"}, 0.2)};
    EXPECT_THROW(fasa::merge_decisions({}, queue, {decision("nope", DecisionAction::reject)}), fasa::UnknownId);
    EXPECT_THROW(fasa::merge_decisions({}, queue,
                                       {decision("v1", DecisionAction::reject), decision("v1", DecisionAction::accept_gt)}),
                 fasa::DuplicateDecision);
    EXPECT_THROW(fasa::merge_decisions({}, queue, {decision("v1", DecisionAction::manual, " ?! ")}),
                 fasa::MissingManualText);
}

TEST(MergeDecisions, OrderInsensitiveAndIdempotent) {
    std::mt19937_64 rng(5);
    std::vector<VerifyItem> queue;
    std::vector<VerifyDecision> decisions;
    const DecisionAction actions[] = {DecisionAction::accept_gt, DecisionAction::accept_pred, DecisionAction::manual,
                                      DecisionAction::reject};
    for (int k = 0; k < 12; ++k) {
        const auto id = "v" + std::to_string(k);
        queue.push_back(item(id, fasa_test::random_words(rng, 3, 5), fasa_test::random_words(rng, 3, 5), 0.3));
        if (k % 5 != 4) decisions.push_back(decision(id, actions[rng() % 4], "manual words " + id));
    }
    Manifest base;
    base.records = {record("a", 0, {"hi"})};
    const auto want = fasa::merge_decisions(base, queue, decisions);
    EXPECT_EQ(fasa::merge_decisions(base, queue, decisions), want);
    for (int iter = 0; iter < 20; ++iter) {
        std::shuffle(decisions.begin(), decisions.end(), rng);
        ASSERT_EQ(fasa::merge_decisions(base, queue, decisions), want);
    }
}
