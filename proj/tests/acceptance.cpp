// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Usage: malt_acceptance [path-to-unit-test-binary]
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <unistd.h>
#include <string>
#include <vector>

#include "malt/attention.hpp"
#include "malt/binary_io.hpp"
#include "malt/encoder.hpp"
#include "malt/errors.hpp"
#include "malt/harness.hpp"
#include "malt/metrics.hpp"
#include "oracles.hpp"

using namespace malt;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::map<int, Outcome> outcomes;

const char* kNames[] = {"",
                        "gradient correctness",
                        "sparse equals dense",
                        "shape law",
                        "weight sharing",
                        "loss identity",
                        "causality",
                        "metric oracles",
                        "learning capability",
                        "ablation direction",
                        "round trip, determinism, runtime"};

void record(int id, bool pass, const std::string& detail) {
    outcomes[id] = {pass, detail};
    std::printf("criterion %2d [%s]: %s  %s\n", id, kNames[id], pass ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<unsigned char> file_bytes(const fs::path& p) { return io::read_file(p.string()); }

// 1. End-to-end finite differences on the tiny config.
void gradient_correctness() {
    const auto t0 = Clock::now();
    const GradcheckReport rep = run_gradcheck(tiny_config(), 32);
    const double secs = seconds_since(t0);
    double e2e = 0.0, modules = 0.0;
    std::size_t checks = 0;
    bool modules_ok = true;
    for (const auto& r : rep.rows) {
        if (r.suite == "end-to-end") {
            e2e = std::max(e2e, r.worst);
            checks += r.checks;
        } else {
            modules = std::max(modules, r.worst);
            modules_ok = modules_ok && r.pass;
        }
    }
    const GradcheckReport miswired = run_gradcheck(tiny_config(), 32, true);
    record(1, checks == 32 && e2e < 1e-6 && modules_ok && !miswired.pass() && secs < 60.0,
           fmt("32 sampled parameters, worst rel err %.2e (modules %.2e); miswired backward %s; %.1f s", e2e,
               modules, miswired.pass() ? "NOT detected" : "detected", secs));
}

// 2. Top-k with k >= key count is dense attention; ties at the threshold are kept.
void sparse_equals_dense() {
    Rng rng(2024);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t heads = rng.range(1, 4);
        const std::size_t dim = heads * rng.range(1, 8);
        ParamStore store;
        const auto w = AttentionWeights::create(store, "a", dim, heads, AttentionMode::cross, rng);
        const Tensor x1 = random_normal({rng.range(1, 16), dim}, rng);
        const Tensor x2 = random_normal({rng.range(1, 32), dim}, rng);
        const std::size_t k = x2.rows() + rng.below(4);
        Graph g;
        const Var a = g.constant(x1), b = g.constant(x2);
        const Tensor sparse = g.value(sparse_attention(g, store, w, a, b, {k, true}));
        const Tensor dense = g.value(sparse_attention(g, store, w, a, b, {k, false}));
        worst = std::max(worst, max_abs_diff(sparse, dense));
    }

    // Tie semantics: an entry survives iff fewer than k entries are strictly larger.
    std::size_t tie_rows = 0, tie_mismatch = 0;
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = rng.range(1, 10), k = rng.range(1, 10);
        Tensor row({1, n});
        for (double& v : row.values()) v = double(rng.below(4));
        const Tensor masked = topk_mask(row, k);
        bool has_tie = false;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t larger = 0, equal = 0;
            for (std::size_t j = 0; j < n; ++j) {
                larger += row.at(0, j) > row.at(0, i);
                equal += row.at(0, j) == row.at(0, i);
            }
            const bool keep = larger < k;
            has_tie = has_tie || (keep && larger + equal > k);
            const bool kept = std::isfinite(masked.at(0, i)) && masked.at(0, i) == row.at(0, i);
            tie_mismatch += kept != keep;
        }
        tie_rows += has_tie;
    }
    // A duplicated dominant key: k = 1 keeps both copies at probability 1/2.
    ParamStore store;
    Rng r2(3);
    const auto w = AttentionWeights::create(store, "t", 4, 1, AttentionMode::cross, r2);
    store.at("t.wq").value = Tensor::identity(4);
    store.at("t.wk").value = Tensor::identity(4);
    Graph g;
    AttentionTrace trace;
    sparse_attention(g, store, w, g.constant(Tensor::matrix({{2, 1, -1, 3}})),
                     g.constant(Tensor::matrix({{2, 1, -1, 3}, {0.1, 0, 0.2, 0}, {2, 1, -1, 3}, {-0.3, 0.1, 0, 0.1}})),
                     {1, true}, {}, &trace);
    const Tensor& p = trace.probabilities[0];
    const bool dup_ok = p.at(0, 0) == 0.5 && p.at(0, 2) == 0.5 && p.at(0, 1) == 0.0 && p.at(0, 3) == 0.0;
    record(2, worst < 1e-12 && tie_mismatch == 0 && tie_rows > 50 && dup_ok,
           fmt("100 instances, max |sparse - dense| %.1e; 300 tie rows (%zu with threshold ties), %zu mismatches; "
               "duplicated key split %s",
               worst, tie_rows, tie_mismatch, dup_ok ? "0.5/0.5" : "wrong"));
}

// 3. f_n^p has L / 2^(n-p) tokens.
void shape_law() {
    std::size_t checked = 0, wrong = 0;
    for (std::size_t N : {1u, 2u, 3u}) {
        for (std::size_t L : {8u, 16u, 32u}) {
            MaltConfig cfg;
            cfg.branches = N;
            cfg.latent_len = L;
            cfg.model_dim = 8;
            cfg.heads = 2;
            cfg.long_frames = 48;
            cfg.topk = 8;
            Rng rng(N * 100 + L);
            ParamStore store;
            const auto w = EncoderWeights::create(store, cfg, rng);
            Graph g;
            const auto out = run_encoder(g, store, w, g.constant(random_normal({48, 8}, rng)), {8, true});
            wrong += out.stages.size() != N;
            for (std::size_t n = 1; n <= N; ++n) {
                wrong += out.stages[n - 1].size() != n;
                for (std::size_t p = 1; p <= out.stages[n - 1].size(); ++p) {
                    const Tensor& f = g.value(out.stages[n - 1][p - 1]);
                    wrong += f.rows() != oracle::stage_tokens(L, n, p) || f.cols() != 8;
                    ++checked;
                }
            }
        }
    }
    record(3, wrong == 0 && checked == 3 * (1 + 3 + 6), fmt("%zu stage tensors over N in {1,2,3}, L in {8,16,32}; %zu wrong", checked, wrong));
}

// 4. Decoder parameters do not grow with N; encoder parameters do.
void weight_sharing() {
    std::vector<std::size_t> dec, enc;
    for (std::size_t N = 1; N <= 4; ++N) {
        MaltConfig cfg;
        cfg.branches = N;
        const auto pc = parameter_count(MaltModel(cfg).params());
        dec.push_back(pc.per_module.at("decoder"));
        enc.push_back(pc.per_module.at("encoder"));
    }
    bool ok = true;
    for (std::size_t i = 1; i < 4; ++i) ok = ok && dec[i] == dec[0] && enc[i] > enc[i - 1];
    record(4, ok, fmt("decoder %zu/%zu/%zu/%zu, encoder %zu/%zu/%zu/%zu for N = 1..4", dec[0], dec[1], dec[2], dec[3],
                      enc[0], enc[1], enc[2], enc[3]));
}

// 7. AP and cAP against enumeration.
void metric_oracles() {
    Rng rng(7007);
    std::size_t compared = 0, mismatch = 0, balanced = 0, balanced_mismatch = 0;
    for (int trial = 0; trial < 250; ++trial) {
        const bool force_balanced = trial >= 200;
        std::size_t n = 1 + rng.below(14);
        if (force_balanced) n = 2 * (1 + rng.below(7));
        std::vector<double> s(n);
        std::vector<bool> pos(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = rng.below(3) == 0 ? double(rng.below(4)) : rng.uniform();
            pos[i] = rng.below(2) == 1;
        }
        if (force_balanced) {
            std::fill(pos.begin(), pos.end(), false);
            for (std::size_t placed = 0; placed < n / 2;) {
                const std::size_t i = rng.below(n);
                if (!pos[i]) pos[i] = true, ++placed;
            }
        }
        std::unique_ptr<bool[]> flags(new bool[n]);
        std::copy(pos.begin(), pos.end(), flags.get());
        const std::span<const bool> p(flags.get(), n);
        const auto ap = average_precision(s, p), cap = calibrated_average_precision(s, p);
        const auto want_ap = oracle::average_precision(s, pos, false);
        const auto want_cap = oracle::average_precision(s, pos, true);
        if (!force_balanced) {
            ++compared;
            mismatch += ap != want_ap || cap != want_cap;
        }
        if (ap && std::count(pos.begin(), pos.end(), true) * 2 == std::ptrdiff_t(n)) {
            ++balanced;
            balanced_mismatch += *cap != *ap;
        }
    }
    record(7, compared == 200 && mismatch == 0 && balanced >= 50 && balanced_mismatch == 0,
           fmt("%zu random instances, %zu mismatches vs enumeration; cAP != AP on %zu of %zu balanced (w = 1) instances",
               compared, mismatch, balanced_mismatch, balanced));
}

// Causal per-frame scoring on a frame stride keeps ten runs inside the time
// budget. The training split has twice the streams, so twice the stride gives
// both sets the same 4096 scored frames.
constexpr std::size_t kEvalStride = 4;
constexpr std::size_t kTrainStride = 8;

struct DeskRun {
    TrainResult result;
    double train_accuracy = -1.0;
};

DeskRun train_desk(std::size_t branches, std::uint64_t seed, const DataSet& data, bool train_accuracy) {
    TrainRequest req;
    req.config = MaltConfig{};
    req.config.branches = branches;
    req.config.seed = seed;
    req.data = &data;
    req.eval_every = req.config.epochs;
    req.eval_protocol = EvalProtocol::online;
    req.eval_stride = kEvalStride;
    DeskRun run;
    run.result = run_training(req);
    if (train_accuracy) {
        MaltModel model(req.config);
        restore_params(run.result.last, req.config, model.params());
        run.train_accuracy = evaluate(model, data.train, EvalProtocol::online, kTrainStride).accuracy;
    }
    std::printf("  trained N=%zu seed %llu: eval mAP %.4f mcAP %.4f%s (%.1f s)\n", branches,
                static_cast<unsigned long long>(seed), run.result.last_eval->mean_ap, run.result.last_eval->mean_cap,
                train_accuracy ? fmt(", train accuracy %.4f", run.train_accuracy).c_str() : "", run.result.seconds);
    std::fflush(stdout);
    return run;
}

// 6. Online predictions at t do not depend on frames after t.
void causality(const Checkpoint& trained) {
    MaltModel model(trained.config);
    restore_params(trained, trained.config, model.params());
    SyntheticStreamSpec spec;
    spec.length = 300;
    Rng rng(66);
    std::size_t compared = 0, differ = 0;
    bool guard_fires = false;
    for (std::size_t i = 0; i < 5; ++i) {
        const LabeledStream s = generate_stream(spec, 1000 + i);
        const Tensor full = score_stream(model, s, EvalProtocol::online);
        std::vector<std::size_t> cuts{0, s.length() - 1};
        for (int j = 0; j < 10; ++j) cuts.push_back(rng.below(s.length()));
        for (std::size_t t : cuts) {
            LabeledStream cut;
            cut.classes = s.classes;
            cut.labels.assign(s.labels.begin(), s.labels.begin() + std::ptrdiff_t(t + 1));
            const auto vals = s.features.values();
            cut.features = Tensor({t + 1, s.features.cols()},
                                  std::vector<double>(vals.begin(), vals.begin() + std::ptrdiff_t((t + 1) * s.features.cols())));
            const Tensor probs = model.predict(stream_window(cut, t, trained.config));
            differ += !std::ranges::equal(probs.row(trained.config.short_frames - 1), full.row(t));
            ++compared;
        }
        try {
            CausalFrameSource(s.features, 10).frame(11);
        } catch (const ContractError&) {
            guard_fires = true;
        }
    }
    record(6, differ == 0 && compared == 60 && guard_fires,
           fmt("5 streams, %zu truncation points, %zu differ; guard rejects a read of t+1: %s", compared, differ,
               guard_fires ? "yes" : "no"));
}

// 10. Checkpoint bytes survive load/save; identical seeds give identical runs.
bool round_trip_and_determinism(std::string& detail) {
    const fs::path dir = fs::temp_directory_path() / ("malt_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    MaltConfig tiny = tiny_config();
    tiny.epochs = 3;
    tiny.windows_per_epoch = 32;
    SyntheticStreamSpec spec;
    spec.classes = tiny.classes;
    spec.input_dim = tiny.input_dim;
    spec.length = 200;
    const DataSet tiny_data = generate_dataset(spec, 3, 2);
    for (const char* run : {"a", "b"}) {
        TrainRequest req;
        req.config = tiny;
        req.data = &tiny_data;
        req.out_dir = (dir / run).string();
        run_training(req);
    }
    bool same_files = true;
    for (const char* f : {"last.ckpt", "best.ckpt", "manifest.json", "batches.jsonl"}) {
        same_files = same_files && file_bytes(dir / "a" / f) == file_bytes(dir / "b" / f);
    }
    const auto bytes = file_bytes(dir / "a" / "last.ckpt");
    save_checkpoint((dir / "resaved.ckpt").string(), load_checkpoint((dir / "a" / "last.ckpt").string()));
    const bool round_trip = file_bytes(dir / "resaved.ckpt") == bytes;

    // One desk-scale epoch twice, compared through the final checkpoint and eval report.
    MaltConfig desk;
    desk.epochs = 1;
    const DataSet desk_data = generate_dataset(SyntheticStreamSpec{}, 16, 2);
    std::vector<std::vector<unsigned char>> states;
    std::vector<std::string> reports;
    for (int rep = 0; rep < 2; ++rep) {
        TrainRequest req;
        req.config = desk;
        req.data = &desk_data;
        req.eval_stride = kEvalStride;
        const auto r = run_training(req);
        states.push_back(encode_checkpoint(r.last));
        reports.push_back(to_json(*r.last_eval).dump());
    }
    fs::remove_all(dir);
    const bool desk_same = states[0] == states[1] && reports[0] == reports[1];
    detail = fmt("re-saved checkpoint byte identical: %s; repeated tiny runs identical (checkpoints, manifest, batch log): %s; "
                 "repeated desk epoch identical: %s",
                 round_trip ? "yes" : "no", same_files ? "yes" : "no", desk_same ? "yes" : "no");
    return round_trip && same_files && desk_same;
}

}  // namespace

int main(int argc, char** argv) {
    const auto start = Clock::now();
    double unit_seconds = 0.0;
    int unit_status = 0;
    if (argc > 1) {
        const auto t0 = Clock::now();
        unit_status = std::system((std::string("\"") + argv[1] + "\" > /dev/null 2>&1").c_str());
        unit_seconds = seconds_since(t0);
        std::printf("unit tests: %s (%.1f s)\n", unit_status == 0 ? "passed" : "FAILED", unit_seconds);
    }

    gradient_correctness();
    sparse_equals_dense();
    shape_law();
    weight_sharing();
    metric_oracles();

    // Desk-scale training on the default benchmark. N=2 seeds 1-3 serve the
    // learning criterion; N=1 and N=2 over seeds 1-5 serve the ablation.
    const DataSet data = generate_dataset(SyntheticStreamSpec{}, 16, 8);
    std::vector<DeskRun> n2, n1;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) n2.push_back(train_desk(2, seed, data, seed <= 3));
    for (std::uint64_t seed = 1; seed <= 5; ++seed) n1.push_back(train_desk(1, seed, data, false));

    double worst_gap = 0.0;
    std::size_t batches = 0;
    for (const auto* runs : {&n2, &n1}) {
        for (const auto& r : *runs) {
            for (const auto& b : r.result.batches) worst_gap = std::max(worst_gap, b.identity_gap);
            batches += r.result.batches.size();
        }
    }
    const double beta = MaltConfig{}.beta;
    record(5, worst_gap < 1e-12 && beta == 0.4 && batches > 0,
           fmt("%zu logged batches, worst |total - (alpha main + beta sum aux)| %.2e, beta = %.1f", batches, worst_gap,
               beta));

    causality(n2[0].result.last);

    std::vector<double> accs, maps;
    std::string per_seed;
    double learn_seconds = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        accs.push_back(n2[i].train_accuracy);
        maps.push_back(n2[i].result.last_eval->mean_ap);
        learn_seconds += n2[i].result.seconds;
        per_seed += fmt(" seed %zu: acc %.4f mAP %.4f;", i + 1, accs.back(), maps.back());
    }
    record(8, median(accs) >= 0.95 && median(maps) >= 0.85,
           fmt("online protocol: median train accuracy %.4f (>= 0.95, every %zu-th frame), median eval mAP %.4f "
               "(>= 0.85, every %zu-th frame), %.0f s for 3 runs;%s",
               median(accs), kTrainStride, median(maps), kEvalStride, learn_seconds, per_seed.c_str()));

    std::vector<double> diffs;
    std::string values;
    for (std::size_t i = 0; i < 5; ++i) {
        const double a = n2[i].result.last_eval->mean_ap, b = n1[i].result.last_eval->mean_ap;
        diffs.push_back(a - b);
        values += fmt(" seed %zu: N=2 %.4f, N=1 %.4f, diff %+.4f;", i + 1, a, b, a - b);
    }
    record(9, median(diffs) > 0.0, fmt("median(mAP N=2 - mAP N=1) = %+.4f over 5 seeds;%s", median(diffs), values.c_str()));

    std::string detail;
    const bool determinism = round_trip_and_determinism(detail);
    const double total = seconds_since(start);
    record(10, determinism && unit_status == 0 && argc > 1 && total < 600.0,
           fmt("%s; unit tests %s; suite time %.0f s (< 600 s)", detail.c_str(),
               argc > 1 ? (unit_status == 0 ? "passed" : "failed") : "not run", total));

    std::size_t failed = 0;
    std::printf("\nsummary\n");
    for (const auto& [id, o] : outcomes) {
        std::printf("  %2d %-34s %s\n", id, kNames[id], o.pass ? "PASS" : "FAIL");
        failed += !o.pass;
    }
    std::printf("%zu of %zu criteria passed\n", outcomes.size() - failed, outcomes.size());
    return failed == 0 ? 0 : 1;
}
