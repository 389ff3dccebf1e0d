// malt: train, evaluate and stream the online action detector.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <tuple>
#include <utility>

#include <CLI11.hpp>

#include "malt/errors.hpp"
#include "malt/harness.hpp"

using namespace malt;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kUsage = 2;

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

struct DataArgs {
    std::string dir;   // read <dir>/train and <dir>/eval
    std::string spec;  // otherwise generate from this spec (or the default)
    std::size_t train_streams = 16;
    std::size_t eval_streams = 8;
};

MaltConfig load_config(const Common& c) {
    MaltConfig cfg;
    if (!c.config.empty()) cfg = load_config_file(c.config).get<MaltConfig>();
    if (c.seed) cfg.seed = *c.seed;
    cfg.validate();
    return cfg;
}

SyntheticStreamSpec load_spec(const std::string& path, const MaltConfig& cfg) {
    SyntheticStreamSpec spec;
    spec.classes = cfg.classes;
    spec.input_dim = cfg.input_dim;
    if (!path.empty()) spec = load_config_file(path).get<SyntheticStreamSpec>();
    spec.validate();
    return spec;
}

DataSet load_data(const DataArgs& d, const MaltConfig& cfg) {
    if (!d.dir.empty()) return load_dataset(d.dir);
    return generate_dataset(load_spec(d.spec, cfg), d.train_streams, d.eval_streams);
}

void add_data_flags(CLI::App* cmd, DataArgs& d) {
    cmd->add_option("--data", d.dir, "Directory holding train/ and eval/ stream files");
    cmd->add_option("--spec", d.spec, "Synthetic data spec (JSON) used when --data is absent");
    cmd->add_option("--train-streams", d.train_streams, "Generated training streams")->check(CLI::PositiveNumber);
    cmd->add_option("--eval-streams", d.eval_streams, "Generated evaluation streams")->check(CLI::PositiveNumber);
}

void print_report(const MetricReport& r) {
    for (std::size_t c = 1; c <= r.classes; ++c) {
        if (r.ap[c - 1]) {
            std::printf("class %2zu  AP %.4f  cAP %.4f  (%zu frames)\n", c, *r.ap[c - 1], *r.cap[c - 1],
                        r.positives[c - 1]);
        } else {
            std::printf("class %2zu  excluded (no positive frames)\n", c);
        }
    }
    std::printf("mAP %.4f  mcAP %.4f  accuracy %.4f  frames %zu\n", r.mean_ap, r.mean_cap, r.accuracy, r.frames);
}

void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << j.dump(2) << "\n";
}

std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream in(s);
    for (std::string item; std::getline(in, item, ',');) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MALT online action detection"};
    app.require_subcommand(1);
    Common common;
    auto common_flags = [&](CLI::App* cmd) {
        cmd->add_option("--config", common.config, "Model config (JSON, comments allowed)");
        cmd->add_option("--seed", common.seed, "Overrides the config seed");
        cmd->add_option("--out", common.out, "Output directory or file");
    };

    DataArgs data;
    std::string resume;
    std::size_t eval_every = 5;
    std::string protocol = "online";
    std::size_t train_stride = 4, eval_stride = 1, ablate_stride = 4;
    auto eval_flags = [&](CLI::App* cmd, std::size_t& stride) {
        cmd->add_option("--protocol", protocol, "online (last token per frame) or chunked")
            ->check(CLI::IsMember({"chunked", "online"}))
            ->capture_default_str();
        cmd->add_option("--stride", stride, "Online protocol: score every n-th frame")
            ->check(CLI::PositiveNumber)
            ->capture_default_str();
    };
    // The default stride only applies to online; an explicit one is passed through and validated.
    auto resolve = [&](CLI::App* cmd, std::size_t stride) {
        const auto p = protocol == "online" ? EvalProtocol::online : EvalProtocol::chunked;
        if (p == EvalProtocol::chunked && cmd->count("--stride") == 0) stride = 1;
        return std::pair{p, stride};
    };
    auto* train = app.add_subcommand("train", "Train and write checkpoints plus a run manifest");
    common_flags(train);
    add_data_flags(train, data);
    train->add_option("--resume", resume, "Continue from this checkpoint");
    train->add_option("--eval-every", eval_every, "Epochs between evaluations")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    eval_flags(train, train_stride);

    std::string checkpoint;
    bool oracle = false;
    auto* eval = app.add_subcommand("eval", "Per-frame mAP and mcAP of a checkpoint");
    common_flags(eval);
    add_data_flags(eval, data);
    eval->add_option("--checkpoint", checkpoint)->required();
    eval_flags(eval, eval_stride);
    eval->add_flag("--oracle", oracle, "Score with one-hot labels (debug)");

    std::string stream_file;
    auto* stream = app.add_subcommand("stream", "Frame-by-frame causal predictions");
    common_flags(stream);
    stream->add_option("--checkpoint", checkpoint)->required();
    stream->add_option("--stream", stream_file, "Stream file (.mstr)")->required();

    std::size_t samples = 32;
    bool corrupt = false;
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
    common_flags(gradcheck);
    gradcheck->add_option("--samples", samples, "Sampled scalars per suite")->check(CLI::PositiveNumber);
    gradcheck->add_flag("--corrupt", corrupt, "Negative control: miswire one backward rule");

    std::string variants = "full,no-sparse,no-recurrent,no-aux,N=1,N=2,N=3,N=4,fusion=add,fusion=cascade";
    std::string seeds = "1";
    auto* ablate = app.add_subcommand("ablate", "Train variants with shared seeds and tabulate");
    common_flags(ablate);
    add_data_flags(ablate, data);
    ablate->add_option("--variants", variants, "Comma-separated variant names");
    ablate->add_option("--seeds", seeds, "Comma-separated seeds");
    eval_flags(ablate, ablate_stride);

    auto* gen = app.add_subcommand("gen-data", "Write a synthetic benchmark to disk");
    common_flags(gen);
    gen->add_option("--spec", data.spec, "Synthetic data spec (JSON)");
    gen->add_option("--train-streams", data.train_streams)->check(CLI::PositiveNumber);
    gen->add_option("--eval-streams", data.eval_streams)->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*train) {
            if (common.out.empty()) throw ConfigError("train: --out is required");
            TrainRequest req;
            req.config = load_config(common);
            const DataSet ds = load_data(data, req.config);
            req.data = &ds;
            req.out_dir = common.out;
            req.eval_every = eval_every;
            std::tie(req.eval_protocol, req.eval_stride) = resolve(train, train_stride);
            req.log = &std::cout;
            if (!resume.empty()) req.resume = resume;
            const auto r = run_training(req);
            double gap = 0.0;
            for (const auto& b : r.batches) gap = std::max(gap, b.identity_gap);
            std::printf("best eval mAP %.4f at epoch %zu; worst loss identity gap %.3g; %.1f s\n", r.best_map,
                        r.best_epoch, gap, r.seconds);
        } else if (*eval) {
            const Checkpoint ckpt = load_checkpoint(checkpoint);
            const DataSet ds = load_data(data, ckpt.config);
            const auto [p, stride] = resolve(eval, eval_stride);
            const auto r = run_eval(ckpt, ds.eval, p, stride, oracle);
            print_report(r);
            if (!common.out.empty()) write_json(common.out, to_json(r));
        } else if (*stream) {
            const Checkpoint ckpt = load_checkpoint(checkpoint);
            const LabeledStream s = read_stream(stream_file);
            std::ofstream file;
            if (!common.out.empty()) {
                file.open(common.out);
                if (!file) throw DataError("cannot write '" + common.out + "'");
            }
            std::ostream& emit = common.out.empty() ? std::cout : file;
            const auto r = run_stream(ckpt, s, emit);
            std::fprintf(stderr, "%zu frames, mean latency %.3f ms (%.1f frames/s)\n", r.frames, r.mean_latency_ms,
                         r.frames_per_second);
        } else if (*gradcheck) {
            MaltConfig cfg = common.config.empty() ? tiny_config() : load_config(common);
            if (common.seed) cfg.seed = *common.seed;
            const auto r = run_gradcheck(cfg, samples, corrupt);
            std::printf("%-22s %-40s %6s %12s\n", "suite", "parameter", "checks", "worst");
            for (const auto& row : r.rows) {
                std::printf("%-22s %-40s %6zu %12.3e %s\n", row.suite.c_str(), row.param.c_str(), row.checks,
                            row.worst, row.pass ? "ok" : "FAIL");
            }
            std::printf("%s (tolerance %.0e)\n", r.pass() ? "PASS" : "FAIL", r.tolerance);
            return r.pass() ? kOk : kFailed;
        } else if (*ablate) {
            const MaltConfig cfg = load_config(common);
            const DataSet ds = load_data(data, cfg);
            std::vector<std::uint64_t> seed_list;
            for (const auto& s : split(seeds)) seed_list.push_back(std::stoull(s));
            const auto [p, stride] = resolve(ablate, ablate_stride);
            const auto rows = run_ablation(cfg, ds, split(variants), seed_list, p, stride, &std::cerr);
            const std::string table = format_ablation(rows);
            std::cout << table;
            if (!common.out.empty()) {
                std::ofstream(common.out) << table;
            }
        } else if (*gen) {
            if (common.out.empty()) throw ConfigError("gen-data: --out is required");
            MaltConfig cfg = common.config.empty() ? MaltConfig{} : load_config(common);
            SyntheticStreamSpec spec = load_spec(data.spec, cfg);
            if (common.seed) spec.seed = *common.seed;
            write_dataset(common.out, spec, data.train_streams, data.eval_streams);
            std::printf("wrote %zu train and %zu eval streams to %s (data hash %s)\n", data.train_streams,
                        data.eval_streams, common.out.c_str(), load_dataset(common.out).hash.c_str());
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kUsage;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return kUsage;
    } catch (const DimensionError& e) {
        std::fprintf(stderr, "dimension error: %s\n", e.what());
        return kUsage;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "bad argument: %s\n", e.what());
        return kUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kFailed;
    }
    return kOk;
}
