#include "malt/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>

#include <openssl/evp.h>

#include "malt/binary_io.hpp"
#include "malt/errors.hpp"
#include "malt/gradcheck.hpp"

namespace fs = std::filesystem;

namespace malt {

namespace {

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string sha1_hex(const void* data, std::size_t size) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data, size, md, &len, EVP_sha1(), nullptr) != 1) throw Error("sha1 digest failed");
    std::string out;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof buf, "%02x", md[i]);
        out += buf;
    }
    return out;
}

std::vector<fs::path> stream_files(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DataError("missing data directory '" + dir.string() + "'");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".mstr") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("no .mstr files in '" + dir.string() + "'");
    return files;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << text;
}

nlohmann::json read_json(const fs::path& path) {
    const auto bytes = io::read_file(path.string());
    return parse_config_text(std::string(bytes.begin(), bytes.end()));
}

nlohmann::json batch_record(const BatchLog& b) {
    return {{"epoch", b.epoch}, {"step", b.step},       {"total", b.loss.total},
            {"main", b.loss.main}, {"aux", b.loss.aux}, {"identity_gap", b.identity_gap}};
}

}  // namespace

std::string git_blob_id(const std::vector<unsigned char>& bytes) {
    const std::string header = "blob " + std::to_string(bytes.size()) + '\0';
    std::vector<unsigned char> blob(header.begin(), header.end());
    blob.insert(blob.end(), bytes.begin(), bytes.end());
    return sha1_hex(blob.data(), blob.size());
}

std::string content_hash(const std::vector<std::vector<unsigned char>>& files) {
    std::string ids;
    for (const auto& bytes : files) ids += git_blob_id(bytes) + "\n";
    return sha1_hex(ids.data(), ids.size());
}

DataSet generate_dataset(const SyntheticStreamSpec& spec, std::size_t n_train, std::size_t n_eval) {
    DataSet d;
    d.train = generate_streams(spec, n_train, 0);
    d.eval = generate_streams(spec, n_eval, n_train);
    std::vector<std::vector<unsigned char>> bytes;
    for (const auto* part : {&d.train, &d.eval}) {
        for (const auto& s : *part) bytes.push_back(encode_stream(s));
    }
    d.hash = content_hash(bytes);
    return d;
}

DataSet load_dataset(const std::string& dir) {
    DataSet d;
    std::vector<std::vector<unsigned char>> bytes;
    for (const auto& [sub, out] : {std::pair{"train", &d.train}, std::pair{"eval", &d.eval}}) {
        for (const auto& f : stream_files(fs::path(dir) / sub)) {
            bytes.push_back(io::read_file(f.string()));
            out->push_back(decode_stream(bytes.back()));
        }
    }
    d.hash = content_hash(bytes);
    return d;
}

void write_dataset(const std::string& dir, const SyntheticStreamSpec& spec, std::size_t n_train, std::size_t n_eval) {
    spec.validate();
    for (const auto& [sub, first, count] : {std::tuple{"train", std::size_t{0}, n_train},
                                            std::tuple{"eval", n_train, n_eval}}) {
        fs::create_directories(fs::path(dir) / sub);
        for (std::size_t i = 0; i < count; ++i) {
            char name[32];
            std::snprintf(name, sizeof name, "%04zu.mstr", i);
            write_stream((fs::path(dir) / sub / name).string(), generate_stream(spec, first + i));
        }
    }
    write_text(fs::path(dir) / "spec.json", nlohmann::json(spec).dump(2) + "\n");
}

nlohmann::json RunManifest::to_json() const {
    return {{"config_hash", config_hash}, {"seed", seed}, {"data_hash", data_hash}, {"history", history}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
    RunManifest m;
    m.config_hash = j.at("config_hash").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.data_hash = j.at("data_hash").get<std::string>();
    m.history = j.at("history");
    return m;
}

Checkpoint snapshot(const MaltModel& model, const Trainer& trainer) {
    return Checkpoint{model.config(), model.params(), trainer.rng().state(), trainer.epoch(), trainer.step()};
}

TrainResult run_training(const TrainRequest& req) {
    if (req.data == nullptr || req.data->train.empty() || req.data->eval.empty()) {
        throw ContractError("train: need training and evaluation streams");
    }
    if (req.eval_every == 0) throw ConfigError("train: eval_every must be >= 1");
    const MaltConfig& cfg = req.config;
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();

    MaltModel model(cfg);
    Trainer trainer(model, cfg.seed);
    TrainResult result;
    result.manifest.config_hash = hex64(config_hash(nlohmann::json(cfg)));
    result.manifest.seed = cfg.seed;
    result.manifest.data_hash = req.data->hash;

    const bool writing = !req.out_dir.empty();
    const fs::path out(req.out_dir);
    if (writing) fs::create_directories(out);
    const fs::path manifest_path = out / "manifest.json";

    if (req.resume) {
        const Checkpoint ckpt = load_checkpoint(*req.resume);
        restore_params(ckpt, cfg, model.params());
        trainer.restore(ckpt.epoch, ckpt.adam_step, ckpt.rng_state);
        if (writing && fs::exists(manifest_path)) {
            result.manifest.history = RunManifest::from_json(read_json(manifest_path)).history;
            for (const auto& rec : result.manifest.history) {
                if (rec.contains("mAP") && rec["mAP"].get<double>() > result.best_map) {
                    result.best_map = rec["mAP"].get<double>();
                    result.best_epoch = rec["epoch"].get<std::size_t>();
                }
            }
        }
    }

    std::ofstream batch_log;
    if (writing) {
        batch_log.open(out / "batches.jsonl", req.resume ? std::ios::app : std::ios::trunc);
        if (!batch_log) throw DataError("cannot write '" + (out / "batches.jsonl").string() + "'");
    }
    trainer.on_batch = [&](const BatchLog& b) {
        result.batches.push_back(b);
        if (writing) batch_log << batch_record(b).dump() << "\n";
    };
    auto save_manifest = [&] {
        if (writing) write_text(manifest_path, result.manifest.to_json().dump(2) + "\n");
    };
    if (writing && trainer.epoch() == 0) {
        save_checkpoint((out / "last.ckpt").string(), snapshot(model, trainer));
        save_manifest();
    }

    while (trainer.epoch() < cfg.epochs) {
        const EpochLog e = trainer.run_epoch(req.data->train);
        nlohmann::json rec{{"epoch", e.epoch}, {"loss", e.mean_loss}, {"main", e.mean_main}};
        if (e.epoch % req.eval_every == 0 || e.epoch == cfg.epochs) {
            result.last_eval = evaluate(model, req.data->eval, req.eval_protocol, req.eval_stride);
            rec["mAP"] = result.last_eval->mean_ap;
            rec["mcAP"] = result.last_eval->mean_cap;
            rec["accuracy"] = result.last_eval->accuracy;
            if (result.last_eval->mean_ap > result.best_map) {
                result.best_map = result.last_eval->mean_ap;
                result.best_epoch = e.epoch;
                if (writing) save_checkpoint((out / "best.ckpt").string(), snapshot(model, trainer));
            }
        }
        result.manifest.history.push_back(rec);
        if (writing) {
            save_checkpoint((out / "last.ckpt").string(), snapshot(model, trainer));
            batch_log.flush();
            save_manifest();
        }
        if (req.log) {
            *req.log << "epoch " << e.epoch << "  loss " << e.mean_loss << "  main " << e.mean_main;
            if (rec.contains("mAP")) *req.log << "  eval mAP " << rec["mAP"].get<double>();
            *req.log << std::endl;
        }
    }
    result.last = snapshot(model, trainer);
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

MetricReport run_eval(const Checkpoint& ckpt, const std::vector<LabeledStream>& streams, EvalProtocol protocol,
                      std::size_t stride, bool oracle) {
    if (streams.empty()) throw ContractError("eval: no streams");
    const MaltConfig& cfg = ckpt.config;
    for (const auto& s : streams) {
        if (s.features.cols() != cfg.input_dim || s.classes != cfg.classes) {
            throw DimensionError("eval: checkpoint expects D_in=" + std::to_string(cfg.input_dim) +
                                 ", C=" + std::to_string(cfg.classes) + " but data has D_in=" +
                                 std::to_string(s.features.cols()) + ", C=" + std::to_string(s.classes));
        }
    }
    if (oracle) {
        std::size_t total = 0;
        for (const auto& s : streams) total += s.length();
        Tensor scores({total, cfg.classes + 1});
        std::vector<int> labels;
        for (const auto& s : streams) {
            for (int y : s.labels) {
                scores.at(labels.size(), std::size_t(y)) = 1.0;
                labels.push_back(y);
            }
        }
        return per_frame_map(scores, labels);
    }
    MaltModel model(cfg);
    restore_params(ckpt, cfg, model.params());
    return evaluate(model, streams, protocol, stride);
}

StreamReport run_stream(const Checkpoint& ckpt, const LabeledStream& stream, std::ostream& emit) {
    const MaltConfig& cfg = ckpt.config;
    if (stream.length() < 2) throw ContractError("stream: need more than one frame");
    if (stream.features.cols() != cfg.input_dim) {
        throw DimensionError("stream: checkpoint expects D_in=" + std::to_string(cfg.input_dim) + ", stream has " +
                             std::to_string(stream.features.cols()));
    }
    MaltModel model(cfg);
    restore_params(ckpt, cfg, model.params());
    StreamReport rep;
    emit << "t,label,pred";
    for (std::size_t c = 0; c <= cfg.classes; ++c) emit << ",p" << c;
    emit << ",latency_ms\n";
    double total_ms = 0.0;
    char buf[32];
    for (std::size_t t = 0; t < stream.length(); ++t) {
        const auto t0 = std::chrono::steady_clock::now();
        CausalFrameSource source(stream.features, t);
        const MemoryWindow w = partition_memory(source, cfg.short_frames, cfg.long_frames);
        const Tensor probs = model.predict(w);
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        if (source.max_index_read() > t) throw ContractError("causality guard: read past frame " + std::to_string(t));
        rep.max_index_read = std::max(rep.max_index_read, source.max_index_read());
        const auto row = probs.row(cfg.short_frames - 1);
        const auto pred = std::size_t(std::max_element(row.begin(), row.end()) - row.begin());
        emit << t << ',' << stream.labels[t] << ',' << pred;
        for (double p : row) {
            std::snprintf(buf, sizeof buf, ",%.17g", p);
            emit << buf;
        }
        std::snprintf(buf, sizeof buf, ",%.3f", ms);
        emit << buf << '\n';
        total_ms += ms;
        ++rep.frames;
    }
    rep.mean_latency_ms = total_ms / double(rep.frames);
    rep.frames_per_second = rep.mean_latency_ms > 0.0 ? 1000.0 / rep.mean_latency_ms : 0.0;
    return rep;
}

namespace {

// Identity forward, but the backward rule scales the gradient by 1.5.
Var miswired_identity(Graph& g, Var x) {
    return g.make("miswired_identity", g.value(x), {x}, [](Graph& graph, std::size_t self) {
        Tensor d = graph.grad(self);
        for (double& v : d.values()) v *= 1.5;
        graph.accumulate(graph.node(Var{self}).parents[0], d);
    });
}

LossFn projected(std::function<Var(Graph&, ParamStore&)> op, Tensor weights) {
    return [op = std::move(op), weights = std::move(weights)](Graph& g, ParamStore& store) {
        return sum_all(g, mul(g, op(g, store), g.constant(weights)));
    };
}

void add_suite(GradcheckReport& rep, const std::string& suite, const LossFn& f, ParamStore& store,
               std::size_t samples, Rng& rng) {
    std::map<std::string, GradcheckRow> worst;
    for (const auto& r : check_random_params(f, store, samples, rng)) {
        auto& row = worst[r.param];
        row.suite = suite;
        row.param = r.param;
        ++row.checks;
        row.worst = std::max(row.worst, r.rel_error);
    }
    for (auto& [name, row] : worst) {
        row.pass = row.worst < rep.tolerance;
        rep.rows.push_back(row);
    }
}

}  // namespace

bool GradcheckReport::pass() const {
    return !rows.empty() && std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.pass; });
}

GradcheckReport run_gradcheck(const MaltConfig& cfg, std::size_t samples, bool corrupt, double tolerance) {
    cfg.validate();
    GradcheckReport rep;
    rep.tolerance = tolerance;
    Rng rng(cfg.seed ^ 0x6A09E667F3BCC908ULL);
    const std::size_t D = cfg.model_dim, L = cfg.latent_len;
    const SparsityConfig sparse{cfg.topk, cfg.sparse};
    {
        MaltModel probe(cfg);
        if (probe.params().scalar_count() >= 50000) {
            throw ConfigError("gradcheck: needs a tiny config (< 50k parameters), got " +
                              std::to_string(probe.params().scalar_count()));
        }
    }
    {
        ParamStore store;
        const auto w = AttentionWeights::create(store, "attn", D, cfg.heads, AttentionMode::cross, rng);
        store.add("input.x1", random_normal({L, D}, rng));
        store.add("input.x2", random_normal({cfg.long_frames, D}, rng));
        const SparsityConfig s{std::min(cfg.topk, cfg.long_frames - 1), true};
        add_suite(rep, "attention",
                  projected([&](Graph& g, ParamStore& st) {
                      return attention_block(g, st, w, g.param(st, "input.x1"), g.param(st, "input.x2"), s);
                  }, random_normal({L, D}, rng)),
                  store, samples, rng);
    }
    {
        ParamStore store;
        const auto w = EncoderWeights::create(store, cfg, rng);
        store.add("input.memory", random_normal({cfg.long_frames, D}, rng));
        const Tensor proj = random_normal({L, D}, rng);
        add_suite(rep, "encoder",
                  [&](Graph& g, ParamStore& st) {
                      const auto out = run_encoder(g, st, w, g.param(st, "input.memory"), sparse);
                      std::vector<Var> terms;
                      for (Var f : out.features()) terms.push_back(sum_all(g, mul(g, f, g.constant(proj))));
                      return weighted_sum(g, terms, std::vector<double>(terms.size(), 1.0));
                  },
                  store, samples, rng);
    }
    {
        ParamStore store;
        const auto w = DecoderWeights::create(store, "decoder", cfg, rng);
        store.add("input.query", random_normal({L, D}, rng));
        for (std::size_t n = 1; n <= cfg.branches; ++n) store.add("input.f" + std::to_string(n), random_normal({L, D}, rng));
        add_suite(rep, "decoder",
                  projected([&](Graph& g, ParamStore& st) {
                      std::vector<Var> features;
                      for (std::size_t n = 1; n <= cfg.branches; ++n) features.push_back(g.param(st, "input.f" + std::to_string(n)));
                      return run_decoder(g, st, w, features, g.param(st, "input.query"), sparse);
                  }, random_normal({L, D}, rng)),
                  store, samples, rng);
    }
    {
        MaltModel model(cfg);
        const Tensor stream = random_normal({cfg.short_frames + cfg.long_frames, cfg.input_dim}, rng);
        const MemoryWindow window = partition_memory(stream, cfg.short_frames, cfg.long_frames);
        std::vector<int> labels(cfg.short_frames);
        for (auto& y : labels) y = int(rng.below(cfg.classes + 1));
        add_suite(rep, corrupt ? "end-to-end (miswired)" : "end-to-end",
                  [&](Graph& g, ParamStore&) {
                      const Var total = model.loss(g, window, labels).total;
                      return corrupt ? miswired_identity(g, total) : total;
                  },
                  model.params(), samples, rng);
    }
    return rep;
}

MaltConfig apply_variant(MaltConfig cfg, const std::string& variant) {
    auto number = [&](std::size_t prefix) {
        try {
            std::size_t used = 0;
            const auto v = std::stoul(variant.substr(prefix), &used);
            if (used + prefix != variant.size()) throw std::invalid_argument("trailing");
            return std::size_t(v);
        } catch (const std::exception&) {
            throw ConfigError("malformed ablation variant '" + variant + "'");
        }
    };
    if (variant == "full") {
    } else if (variant == "no-sparse") {
        cfg.sparse = false;
    } else if (variant == "no-recurrent") {
        cfg.fusion = FusionMode::cascade;
    } else if (variant == "no-aux") {
        cfg.beta = 0.0;
    } else if (variant.rfind("N=", 0) == 0) {
        cfg.branches = number(2);
    } else if (variant.rfind("k=", 0) == 0) {
        cfg.topk = number(2);
        cfg.sparse = true;
    } else if (variant.rfind("fusion=", 0) == 0) {
        cfg.fusion = fusion_from_string(variant.substr(7));
    } else {
        throw ConfigError("unknown ablation variant '" + variant +
                          "' (expected full, no-sparse, no-recurrent, no-aux, N=<n>, k=<k>, fusion=<mode>)");
    }
    cfg.validate();
    return cfg;
}

std::vector<AblationRow> run_ablation(const MaltConfig& base, const DataSet& data,
                                      const std::vector<std::string>& variants,
                                      const std::vector<std::uint64_t>& seeds, EvalProtocol protocol,
                                      std::size_t stride, std::ostream* log) {
    std::vector<MaltConfig> configs;
    for (const auto& v : variants) configs.push_back(apply_variant(base, v));  // reject bad names before training
    std::vector<AblationRow> rows;
    for (std::size_t i = 0; i < variants.size(); ++i) {
        for (std::uint64_t seed : seeds) {
            TrainRequest req;
            req.config = configs[i];
            req.config.seed = seed;
            req.data = &data;
            req.eval_every = std::max<std::size_t>(req.config.epochs, 1);
            req.eval_protocol = protocol;
            req.eval_stride = stride;
            const TrainResult r = run_training(req);
            AblationRow row{variants[i], seed};
            if (r.last_eval) {
                row.map = r.last_eval->mean_ap;
                row.mcap = r.last_eval->mean_cap;
                row.accuracy = r.last_eval->accuracy;
            }
            row.params = parameter_count(MaltModel(req.config).params()).total;
            if (log) {
                *log << variants[i] << " seed " << seed << ": mAP " << row.map << " mcAP " << row.mcap << " ("
                     << r.seconds << " s)" << std::endl;
            }
            rows.push_back(row);
        }
    }
    return rows;
}

std::string format_ablation(const std::vector<AblationRow>& rows) {
    std::vector<std::string> order;
    std::map<std::string, std::vector<const AblationRow*>> by_variant;
    for (const auto& r : rows) {
        if (!by_variant.contains(r.variant)) order.push_back(r.variant);
        by_variant[r.variant].push_back(&r);
    }
    std::string out;
    char line[160];
    std::snprintf(line, sizeof line, "%-18s %6s %9s %9s %9s %9s\n", "variant", "seeds", "mAP", "mcAP", "acc", "params");
    out += line;
    std::string best_k;
    double best_k_map = -1.0;
    for (const auto& v : order) {
        const auto& rs = by_variant[v];
        double map = 0, mcap = 0, acc = 0;
        for (const auto* r : rs) {
            map += r->map;
            mcap += r->mcap;
            acc += r->accuracy;
        }
        const double n = double(rs.size());
        std::snprintf(line, sizeof line, "%-18s %6zu %9.4f %9.4f %9.4f %9zu\n", v.c_str(), rs.size(), map / n,
                      mcap / n, acc / n, rs.front()->params);
        out += line;
        if (v.rfind("k=", 0) == 0 && map / n > best_k_map) {
            best_k_map = map / n;
            best_k = v.substr(2);
        }
    }
    if (!best_k.empty()) {
        std::snprintf(line, sizeof line, "best k: %s (mAP %.4f)\n", best_k.c_str(), best_k_map);
        out += line;
    }
    return out;
}

}  // namespace malt
