// fasa: align | verify | eval | synth

#include <pthread.h>
#include <signal.h>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "fasa/evalsynth.hpp"
#include "fasa/pipeline.hpp"
#include "fasa/verifysvc.hpp"
#include "fasa/version.hpp"

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kCorpus = 3, kMissingGold = 4 };

int fail(int code, const std::string& msg) {
    std::cerr << "fasa: " << msg << '\n';
    return code;
}

// ---------------------------------------------------------------------------
// align

struct AlignArgs {
    fasa::RunConfig cfg;
    std::string clean_mode = "plain";
    std::string pgc_metric = "relative";
    bool no_apostrophes = false;
    bool no_pgc = false;
    bool json = false;
    std::string asr_hyp, asr_cmd, pgc_hyp, pgc_cmd;
};

void add_align(CLI::App& app, AlignArgs& a) {
    auto* sub = app.add_subcommand("align", "Segment, label and align a corpus");
    auto& c = a.cfg;
    sub->add_option("--corpus", c.corpus_dir, "Directory of <name>.wav + <name>.txt|.cha")->required();
    sub->add_option("--out", c.out_dir, "Output directory")->required();
    sub->add_option("--sigma-a", c.thresholds.sigma_a, "WER below which an utterance is aligned")
        ->capture_default_str();
    sub->add_option("--sigma-i", c.thresholds.sigma_i, "WER below which it goes to review")->capture_default_str();
    sub->add_option("--pgc-rel", c.thresholds.pgc_rel, "Relative length gap that fails the PGC check")
        ->capture_default_str();
    sub->add_option("--pgc-metric", a.pgc_metric, "relative | absolute")
        ->check(CLI::IsMember({"relative", "absolute"}))
        ->capture_default_str();
    sub->add_option("--pgc-abs-words", c.thresholds.pgc_abs_words, "Word gap tolerated in absolute mode")
        ->capture_default_str();
    sub->add_option("--rho", c.thresholds.len_ratio_rho, "Longest window as a multiple of the prediction length")
        ->capture_default_str();
    sub->add_flag("--paper-strict-windows", c.thresholds.paper_strict_windows, "Window lengths 2..L only");
    sub->add_option("--clean-mode", a.clean_mode, "plain | chat")
        ->check(CLI::IsMember({"plain", "chat"}))
        ->capture_default_str();
    sub->add_flag("--no-apostrophes", a.no_apostrophes, "Drop apostrophes inside words (dont, not don't)");
    auto* hyp = sub->add_option("--asr-hyp", a.asr_hyp, "Hypothesis JSON covering the corpus");
    auto* cmd = sub->add_option("--asr-cmd", a.asr_cmd, "ASR command template; {audio} is replaced by the path");
    hyp->excludes(cmd);
    auto* phyp = sub->add_option("--pgc-hyp", a.pgc_hyp, "Second-round hypotheses, one segment per aligned id");
    auto* pcmd = sub->add_option("--pgc-cmd", a.pgc_cmd, "Second-round ASR template run on each cut segment");
    auto* nopgc = sub->add_flag("--no-pgc", a.no_pgc, "Skip the length check");
    phyp->excludes(pcmd);
    nopgc->excludes(phyp)->excludes(pcmd);
    sub->add_option("--workers", c.workers, "Alignment threads")->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_flag("--strict", c.strict, "Stop at the first broken file");
    sub->add_flag("--json", a.json, "Print the run report as JSON");
}

int cmd_align(AlignArgs& a) {
    auto& c = a.cfg;
    c.clean_mode = *fasa::parse_transcript_format(a.clean_mode);
    c.clean_options.keep_apostrophes = !a.no_apostrophes;
    c.thresholds.pgc_metric = a.pgc_metric == "absolute" ? fasa::PgcMetric::absolute : fasa::PgcMetric::relative;
    if (!a.asr_hyp.empty()) c.asr_hyp = a.asr_hyp;
    if (!a.asr_cmd.empty()) c.asr_cmd = a.asr_cmd;
    if (!a.no_pgc && !a.pgc_hyp.empty()) c.pgc_hyp = a.pgc_hyp;
    if (!a.no_pgc && !a.pgc_cmd.empty()) c.pgc_cmd = a.pgc_cmd;

    const auto result = fasa::run_align(c);
    const auto& r = result.report;
    if (a.json) {
        std::cout << fasa::to_json(r).dump(2) << '\n';
    } else {
        std::cout << "utterances " << r.utterances << ": aligned " << r.aligned << ", verify " << r.verify
                  << ", discarded " << r.discarded << ", pgc dropped " << r.pgc_dropped << '\n'
                  << "wrote " << (c.out_dir / "data_align.manifest.jsonl").string() << '\n';
    }
    return kOk;
}

// ---------------------------------------------------------------------------
// verify

struct VerifyArgs {
    std::filesystem::path run_dir;
    std::filesystem::path ui_dir;
    std::string bind = "127.0.0.1";
    int port = 8080;
    bool export_on_exit = false;
};

void add_verify(CLI::App& app, VerifyArgs& a) {
    auto* sub = app.add_subcommand("verify", "Serve the review queue over HTTP");
    sub->add_option("--out", a.run_dir, "Directory written by `fasa align`")->required();
    sub->add_option("--port", a.port, "TCP port; 0 picks a free one")->check(CLI::Range(0, 65535))->capture_default_str();
    sub->add_option("--bind", a.bind, "Address to listen on")->capture_default_str();
    sub->add_option("--ui", a.ui_dir, "Static review UI to serve at /");
    sub->add_flag("--export-on-exit", a.export_on_exit, "Write data_final.manifest.jsonl on shutdown");
}

int cmd_verify(const VerifyArgs& a) {
    fasa::VerifyServiceConfig cfg{a.run_dir / "data_verify.jsonl", a.run_dir / "decisions.jsonl",
                                  a.run_dir / "data_align.manifest.jsonl", a.run_dir / "data_final.manifest.jsonl"};
    if (!std::filesystem::exists(cfg.verify_items)) {
        return fail(kCorpus, "no review queue at " + cfg.verify_items.string() + " (run `fasa align` first)");
    }
    if (!std::filesystem::exists(cfg.auto_manifest)) return fail(kCorpus, "missing " + cfg.auto_manifest.string());

    // Shutdown signals are taken by one thread; the server threads never see them.
    sigset_t stop_signals;
    sigemptyset(&stop_signals);
    sigaddset(&stop_signals, SIGINT);
    sigaddset(&stop_signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);

    fasa::VerifyService service(cfg);
    httplib::Server server;
    fasa::register_routes(server, service);
    auto ui = a.ui_dir;
    if (ui.empty() && std::filesystem::is_directory(a.run_dir / "ui")) ui = a.run_dir / "ui";
    if (!ui.empty() && !server.set_mount_point("/", ui.string())) {
        return fail(kConfig, "cannot serve UI from " + ui.string());
    }

    int port = a.port;
    if (port == 0) {
        port = server.bind_to_any_port(a.bind);
        if (port < 0) return fail(kFailure, "cannot bind " + a.bind);
    } else if (!server.bind_to_port(a.bind, port)) {
        return fail(kFailure, "cannot bind " + a.bind + ":" + std::to_string(port) + " (port in use?)");
    }
    std::cout << "listening on http://" << a.bind << ":" << port << "/ (" << service.pending_count() << " pending)"
              << std::endl;

    // stop() is a no-op until the accept loop is running, so a signal that
    // arrives right after the banner keeps retrying until listen returns.
    std::atomic<bool> done = false;
    std::thread waiter([&] {
        int sig = 0;
        sigwait(&stop_signals, &sig);
        while (!done) {
            server.stop();
            std::this_thread::sleep_for(std::chrono::milliseconds(10));
        }
    });
    const bool ok = server.listen_after_bind();
    done = true;
    // Wake the waiter if the server stopped on its own.
    if (!ok) pthread_kill(waiter.native_handle(), SIGTERM);
    waiter.join();

    if (a.export_on_exit) {
        const auto m = service.export_final();
        std::cout << "exported " << m.records.size() << " records to " << cfg.final_manifest.string() << std::endl;
    }
    return ok ? kOk : kFailure;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
    std::filesystem::path manifest;
    std::filesystem::path gold;
    bool json = false;
};

void add_eval(CLI::App& app, EvalArgs& a) {
    auto* sub = app.add_subcommand("eval", "Score an emitted manifest against gold transcripts");
    sub->add_option("--manifest", a.manifest, "Emitted manifest (JSONL)")->required()->check(CLI::ExistingFile);
    sub->add_option("--gold", a.gold, "Gold transcripts, {\"id\",\"words\"} per line")->required()->check(CLI::ExistingFile);
    sub->add_flag("--json", a.json, "Machine-readable output");
}

int cmd_eval(const EvalArgs& a) {
    const auto manifest = fasa::load_manifest(a.manifest);
    const auto gold = fasa::load_gold(a.gold);
    const auto au = fasa::au_error(manifest, gold);
    const auto aw = fasa::aw_error(manifest, gold);
    if (a.json) {
        const nlohmann::ordered_json j = {
            {"au", {{"aligned", au.aligned}, {"errors", au.errors}, {"rate", au.rate}, {"percent", fasa::format_percent(au.rate)}}},
            {"aw", {{"aligned_words", aw.aligned_words}, {"errors", aw.errors}, {"rate", aw.rate}, {"percent", fasa::format_percent(aw.rate)}}}};
        std::cout << j.dump(2) << '\n';
        return kOk;
    }
    std::printf("%-4s %10s %10s %10s\n", "", "aligned", "errors", "error");
    std::printf("%-4s %10zu %10zu %10s\n", "AU", au.aligned, au.errors, fasa::format_percent(au.rate).c_str());
    std::printf("%-4s %10zu %10zu %10s\n", "AW", aw.aligned_words, aw.errors, fasa::format_percent(aw.rate).c_str());
    return kOk;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
    std::filesystem::path out;
    std::filesystem::path spec_file;
    std::uint64_t seed = 1;
    fasa::SynthSpec spec;
    std::string format = "plain";
};

void add_synth(CLI::App& app, SynthArgs& a) {
    auto* sub = app.add_subcommand("synth", "Generate a synthetic corpus with gold transcripts");
    auto& s = a.spec;
    sub->add_option("--out", a.out, "Output directory (corpus/ plus hypotheses and gold)")->required();
    sub->add_option("--seed", a.seed, "Random seed")->capture_default_str();
    sub->add_option("--spec", a.spec_file, "JSON spec; flags below override it")->check(CLI::ExistingFile);
    sub->add_option("--segments", s.segments, "Number of utterances");
    sub->add_option("--min-words", s.min_words, "Shortest utterance");
    sub->add_option("--max-words", s.max_words, "Longest utterance");
    sub->add_option("--vocabulary", s.vocabulary, "Distinct words");
    sub->add_option("--prefix-drop", s.prefix_drop_frac, "Fraction of leading utterances missing from the transcript");
    sub->add_flag("--block-shuffle", s.block_shuffle, "Shuffle transcript blocks");
    sub->add_option("--block-segments", s.shuffle_block_segments, "Utterances per shuffled block");
    sub->add_option("--annotation-noise", s.annotation_noise_rate, "Rate of punctuation and CHAT codes on words");
    sub->add_option("--untranscribed", s.untranscribed_frac, "Fraction of utterances never transcribed");
    sub->add_option("--sub-rate", s.substitution_rate, "ASR substitution rate");
    sub->add_option("--ins-rate", s.insertion_rate, "ASR insertion rate");
    sub->add_option("--del-rate", s.deletion_rate, "ASR deletion rate");
    sub->add_option("--format", a.format, "plain | chat")->check(CLI::IsMember({"plain", "chat"}));
    sub->add_option("--name", s.name, "Recording name");
}

int cmd_synth(SynthArgs& a, const CLI::App& sub) {
    fasa::SynthSpec spec;
    if (!a.spec_file.empty()) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(fasa::read_file(a.spec_file));
        } catch (const nlohmann::json::parse_error&) {
            throw fasa::ConfigError(a.spec_file.string() + ": invalid JSON");
        }
        if (j.contains("seed") && sub.count("--seed") == 0) a.seed = j.at("seed").get<std::uint64_t>();
        j.erase("seed");
        spec = fasa::synth_spec_from_json(j);
    }
    // Explicit flags override the file.
    auto take = [&](const char* flag, auto& dst, const auto& src) {
        if (sub.count(flag) > 0) dst = src;
    };
    const auto& s = a.spec;
    take("--segments", spec.segments, s.segments);
    take("--min-words", spec.min_words, s.min_words);
    take("--max-words", spec.max_words, s.max_words);
    take("--vocabulary", spec.vocabulary, s.vocabulary);
    take("--prefix-drop", spec.prefix_drop_frac, s.prefix_drop_frac);
    take("--block-shuffle", spec.block_shuffle, s.block_shuffle);
    take("--block-segments", spec.shuffle_block_segments, s.shuffle_block_segments);
    take("--annotation-noise", spec.annotation_noise_rate, s.annotation_noise_rate);
    take("--untranscribed", spec.untranscribed_frac, s.untranscribed_frac);
    take("--sub-rate", spec.substitution_rate, s.substitution_rate);
    take("--ins-rate", spec.insertion_rate, s.insertion_rate);
    take("--del-rate", spec.deletion_rate, s.deletion_rate);
    take("--name", spec.name, s.name);
    if (sub.count("--format") > 0) spec.transcript_format = *fasa::parse_transcript_format(a.format);

    const auto out = fasa::generate(spec, a.seed);
    fasa::write_synth(out, a.out / "corpus", a.out);
    std::cout << "wrote " << spec.segments << " utterances (" << out.corpus.full_transcript.size()
              << " transcript words) to " << (a.out / "corpus").string() << '\n';
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app("Forced-alignment dataset builder", "fasa");
    app.fallthrough();
    app.require_subcommand(1);
    app.set_version_flag("--version", fasa::kToolVersion);
    app.set_config("--config", "", "TOML/INI file; [align], [verify], ... sections mirror the flags");

    AlignArgs align;
    VerifyArgs verify;
    EvalArgs eval;
    SynthArgs synth;
    add_align(app, align);
    add_verify(app, verify);
    add_eval(app, eval);
    add_synth(app, synth);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    try {
        if (app.got_subcommand("align")) return cmd_align(align);
        if (app.got_subcommand("verify")) return cmd_verify(verify);
        if (app.got_subcommand("eval")) return cmd_eval(eval);
        if (app.got_subcommand("synth")) return cmd_synth(synth, *app.get_subcommand("synth"));
    } catch (const fasa::ConfigError& e) {
        return fail(kConfig, e.what());
    } catch (const fasa::CorpusError& e) {
        return fail(kCorpus, e.what());
    } catch (const fasa::MissingGold& e) {
        return fail(kMissingGold, e.what());
    } catch (const std::exception& e) {
        return fail(kFailure, e.what());
    }
    return kFailure;
}
