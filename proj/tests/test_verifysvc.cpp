#include <gtest/gtest.h>

#include <thread>

#include "fasa/verifysvc.hpp"
#include "support.hpp"

using fasa::DecisionAction;
using fasa::ItemStatus;
using fasa::VerifyDecision;
using fasa::VerifyItem;
using fasa::VerifyService;

namespace {

VerifyItem item(std::string id, double wer) {
    VerifyItem v;
    v.id = std::move(id);
    v.audio_path = "segments/" + v.id + ".wav";
    v.source_audio = "rec.wav";
    v.start_s = 1.0;
    v.end_s = 2.0;
    v.gt = {"the", "frog"};
    v.pred = {"a", "frog"};
    v.wer = wer;
    return v;
}

VerifyDecision decide(std::string id, DecisionAction a, std::string text = {}) {
    return {std::move(id), a, std::move(text), {}};
}

// A run directory as the align stage leaves it: one auto record, a queue of
// review items with their audio, and no decisions yet.
class ServiceDir : public ::testing::Test {
protected:
    void SetUp() override { populate({item("v1", 0.2), item("v2", 0.4), item("v3", 0.3)}); }

    void populate(const std::vector<VerifyItem>& items) {
        std::filesystem::create_directories(dir / "segments");
        fasa::Manifest m;
        fasa::SegmentRecord r;
        r.id = "a1";
        r.audio_path = "segments/a1.wav";
        r.source_audio = "rec.wav";
        r.start_s = 0.0;
        r.end_s = 0.5;
        r.transcript = {"hello"};
        m.records = {r};
        m.asr_id = "mock";
        std::int16_t k = 0;
        for (const auto& id : {std::string("a1")}) write_wav(id, ++k);
        for (const auto& it : items) write_wav(it.id, ++k);
        fasa::emit_manifest(m, dir / "data_align.manifest.jsonl");
        fasa::emit_verify_items(items, dir / "data_verify.jsonl");
    }

    void write_wav(const std::string& id, std::int16_t fill) {
        const std::vector<std::int16_t> samples(160, fill);
        const auto bytes = fasa::encode_wav(std::span<const std::int16_t>(samples));
        fasa_test::write_text(dir / ("segments/" + id + ".wav"), std::string(bytes.begin(), bytes.end()));
    }

    fasa::VerifyServiceConfig config() const {
        return {dir / "data_verify.jsonl", dir / "decisions.jsonl", dir / "data_align.manifest.jsonl",
                dir / "data_final.manifest.jsonl", 20};
    }

    fasa_test::TempDir dir;
};

std::vector<std::string> ids(const fasa::ItemPage& page) {
    std::vector<std::string> out;
    for (const auto* it : page.items) out.push_back(it->id);
    return out;
}

} // namespace

TEST(ReviewQueue, EmptyQueueEmptyPage) {
    fasa::ReviewQueue q({});
    EXPECT_TRUE(q.select(ItemStatus::pending).empty());
    EXPECT_EQ(q.pending_count(), 0u);
}

TEST(ReviewQueue, TransitionsAndErrors) {
    fasa::ReviewQueue q({item("a", 0.2), item("b", 0.3)});
    EXPECT_TRUE(q.apply(decide("a", DecisionAction::accept_gt)));
    EXPECT_EQ(q.status("a"), ItemStatus::decided);
    EXPECT_FALSE(q.apply(decide("a", DecisionAction::accept_gt)));
    EXPECT_THROW(q.apply(decide("a", DecisionAction::reject)), fasa::AlreadyDecided);
    EXPECT_THROW(q.apply(decide("zz", DecisionAction::reject)), fasa::UnknownId);
    EXPECT_THROW(q.apply(decide("b", DecisionAction::manual, "")), fasa::MissingManualText);
    EXPECT_THROW(q.apply(decide("b", DecisionAction::manual, " ... ")), fasa::MissingManualText);
    EXPECT_EQ(q.status("b"), ItemStatus::pending);
    EXPECT_EQ(q.decided_count(), 1u);
}

TEST_F(ServiceDir, PendingWorstFirstAndPaged) {
    VerifyService svc(config());
    EXPECT_EQ(ids(svc.list_pending()), (std::vector<std::string>{"v2", "v3", "v1"}));
    const auto p1 = svc.list_pending(1, 2);
    const auto p2 = svc.list_pending(2, 2);
    EXPECT_EQ(ids(p1), (std::vector<std::string>{"v2", "v3"}));
    EXPECT_EQ(ids(p2), (std::vector<std::string>{"v1"}));
    EXPECT_EQ(p1.pages, 2u);
    EXPECT_EQ(p1.total, 3u);
    EXPECT_TRUE(svc.list_pending(3, 2).items.empty());
}

TEST_F(ServiceDir, AudioPassthroughAndUnknownId) {
    VerifyService svc(config());
    const auto want = fasa_test::slurp(dir / "segments/v2.wav");
    const auto got = svc.get_audio("v2");
    EXPECT_EQ(std::string(got.begin(), got.end()), want);
    EXPECT_THROW(svc.get_audio("nope"), fasa::UnknownId);
    svc.post_decision(decide("v2", DecisionAction::reject));
    EXPECT_EQ(svc.get_audio("v2").size(), want.size());
}

TEST_F(ServiceDir, IdenticalPostIsNoOp) {
    VerifyService svc(config());
    const auto first = svc.post_decision(decide("v1", DecisionAction::accept_gt));
    EXPECT_EQ(first.at("status"), "decided");
    const auto log_before = fasa_test::slurp(dir / "decisions.jsonl");
    const auto second = svc.post_decision(decide("v1", DecisionAction::accept_gt));
    EXPECT_EQ(second, first);
    EXPECT_EQ(fasa_test::slurp(dir / "decisions.jsonl"), log_before);
    EXPECT_THROW(svc.post_decision(decide("v1", DecisionAction::accept_pred)), fasa::AlreadyDecided);
    EXPECT_THROW(svc.post_decision(decide("v2", DecisionAction::manual)), fasa::MissingManualText);
    EXPECT_EQ(svc.pending_count(), 2u);
}

TEST_F(ServiceDir, ExportCounts) {
    VerifyService svc(config());
    EXPECT_EQ(svc.export_final(), fasa::load_manifest(dir / "data_align.manifest.jsonl"));
    svc.post_decision(decide("v1", DecisionAction::accept_pred));
    EXPECT_EQ(svc.export_final().records.size(), 2u);
    svc.post_decision(decide("v2", DecisionAction::reject));
    svc.post_decision(decide("v3", DecisionAction::manual, "The frog jumped."));
    const auto m = svc.export_final();
    ASSERT_EQ(m.records.size(), 3u);
    EXPECT_EQ(m.records[0].id, "a1");
    EXPECT_EQ(m.records[2].transcript, (fasa::WordSeq{"the", "frog", "jumped"}));
    EXPECT_EQ(fasa::load_manifest(dir / "data_final.manifest.jsonl"), m);
}

TEST_F(ServiceDir, ReplayReconstructsState) {
    std::vector<std::pair<std::string, ItemStatus>> before;
    {
        VerifyService svc(config());
        svc.post_decision(decide("v3", DecisionAction::manual, "frog"));
        svc.post_decision(decide("v1", DecisionAction::reject));
        for (const auto* it : svc.list(std::nullopt, 1, 100).items) {
            before.emplace_back(it->id, svc.describe(it->id).at("status") == "decided" ? ItemStatus::decided
                                                                                           : ItemStatus::pending);
        }
    }
    VerifyService again(config());
    for (const auto& [id, status] : before) {
        EXPECT_EQ(again.describe(id).at("status"), fasa::to_string(status)) << id;
    }
    EXPECT_EQ(again.pending_count(), 1u);
    EXPECT_EQ(again.describe("v3").at("decision").at("manual_text"), "frog");
}

TEST_F(ServiceDir, TornFinalLineIsIgnored) {
    {
        VerifyService svc(config());
        svc.post_decision(decide("v1", DecisionAction::accept_gt));
    }
    {
        std::ofstream out(dir / "decisions.jsonl", std::ios::app | std::ios::binary);
        out << R"({"item_id":"v2","act)";
    }
    VerifyService svc(config());
    EXPECT_EQ(svc.pending_count(), 2u);
    EXPECT_EQ(svc.describe("v2").at("status"), "pending");
    // New decisions still land on their own line.
    svc.post_decision(decide("v2", DecisionAction::reject));
    VerifyService again(config());
    EXPECT_EQ(again.pending_count(), 1u);
}

TEST_F(ServiceDir, CorruptLogIsRejected) {
    fasa_test::write_text(dir / "decisions.jsonl", "{\"item_id\":\"ghost\",\"action\":\"reject\"}\n");
    EXPECT_THROW(VerifyService svc(config()), fasa::SchemaError);
}

TEST_F(ServiceDir, HttpLifecycle) {
    VerifyService svc(config());
    httplib::Server server;
    fasa::register_routes(server, svc);
    const int port = server.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port, 0);
    std::thread worker([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    httplib::Client client("127.0.0.1", port);
    auto res = client.Get("/api/items?page=1&page_size=2");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    auto body = nlohmann::json::parse(res->body);
    EXPECT_EQ(body.at("total"), 3);
    EXPECT_EQ(body.at("items").size(), 2u);
    EXPECT_EQ(body.at("items")[0].at("id"), "v2");

    res = client.Get("/api/audio/v3");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    EXPECT_EQ(res->get_header_value("Content-Type"), "audio/wav");
    EXPECT_EQ(res->body, fasa_test::slurp(dir / "segments/v3.wav"));

    EXPECT_EQ(client.Get("/api/audio/nope")->status, 404);
    EXPECT_EQ(client.Get("/api/items/nope")->status, 404);
    EXPECT_EQ(client.Get("/api/items?status=bogus")->status, 400);

    res = client.Post("/api/decisions", R"({"item_id":"v2","action":"accept_gt"})", "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    EXPECT_EQ(nlohmann::json::parse(res->body).at("status"), "decided");
    EXPECT_EQ(client.Post("/api/decisions", R"({"item_id":"v2","action":"accept_gt"})", "application/json")->status,
              200);
    EXPECT_EQ(client.Post("/api/decisions", R"({"item_id":"v2","action":"reject"})", "application/json")->status, 409);
    EXPECT_EQ(client.Post("/api/decisions", R"({"item_id":"v1","action":"manual","manual_text":""})",
                          "application/json")
                  ->status,
              400);
    EXPECT_EQ(client.Post("/api/decisions", "not json", "application/json")->status, 400);
    EXPECT_EQ(client.Post("/api/decisions", R"({"item_id":"v9","action":"reject"})", "application/json")->status, 404);

    res = client.Get("/api/items?status=decided");
    EXPECT_EQ(nlohmann::json::parse(res->body).at("total"), 1);

    res = client.Post("/api/export", "", "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    body = nlohmann::json::parse(res->body);
    EXPECT_EQ(body.at("records"), 2);
    EXPECT_EQ(body.at("reviewed_records"), 1);
    EXPECT_TRUE(std::filesystem::exists(dir / "data_final.manifest.jsonl"));

    server.stop();
    worker.join();
}
