#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "malt/checkpoint.hpp"
#include "malt/data.hpp"
#include "malt/train.hpp"

namespace malt {

struct DataSet {
    std::vector<LabeledStream> train;
    std::vector<LabeledStream> eval;
    std::string hash;  // content hash over the encoded stream files
};

// Streams 0..n_train-1 train, the next n_eval evaluate.
DataSet generate_dataset(const SyntheticStreamSpec& spec, std::size_t n_train, std::size_t n_eval);
// <dir>/train/*.mstr and <dir>/eval/*.mstr, read in file-name order.
DataSet load_dataset(const std::string& dir);
void write_dataset(const std::string& dir, const SyntheticStreamSpec& spec, std::size_t n_train, std::size_t n_eval);

// SHA-1 of "blob <size>\0" + bytes, the id git gives a file.
std::string git_blob_id(const std::vector<unsigned char>& bytes);
// SHA-1 over the newline-joined blob ids, in file order.
std::string content_hash(const std::vector<std::vector<unsigned char>>& files);

struct RunManifest {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string data_hash;
    nlohmann::json history = nlohmann::json::array();  // one record per epoch, append only

    nlohmann::json to_json() const;
    static RunManifest from_json(const nlohmann::json& j);
};

struct TrainRequest {
    MaltConfig config;
    const DataSet* data = nullptr;
    std::string out_dir;                 // empty: nothing is written
    std::optional<std::string> resume;   // checkpoint path
    std::size_t eval_every = 1;          // epochs between evaluations; the last epoch is always evaluated
    EvalProtocol eval_protocol = EvalProtocol::online;
    std::size_t eval_stride = 1;         // online only: score every eval_stride-th frame
    std::ostream* log = nullptr;         // per-epoch progress lines
};

struct TrainResult {
    RunManifest manifest;
    std::vector<BatchLog> batches;
    std::optional<MetricReport> last_eval;
    double best_map = -1.0;
    std::size_t best_epoch = 0;
    double seconds = 0.0;
    Checkpoint last;  // state after the final epoch
};

// Writes last.ckpt, best.ckpt (best eval mAP so far), manifest.json and
// batches.jsonl into out_dir. epochs == 0 writes the initial checkpoint only.
TrainResult run_training(const TrainRequest& req);

Checkpoint snapshot(const MaltModel& model, const Trainer& trainer);

// `oracle` replaces the model scores with one-hot labels.
MetricReport run_eval(const Checkpoint& ckpt, const std::vector<LabeledStream>& streams, EvalProtocol protocol,
                      std::size_t stride = 1, bool oracle = false);

struct StreamReport {
    std::size_t frames = 0;
    double mean_latency_ms = 0.0;
    double frames_per_second = 0.0;
    std::size_t max_index_read = 0;
};

// One CSV row per frame: t,label,pred,p_0..p_C,latency_ms. The prediction at
// t comes from the last output token of the window ending at t.
StreamReport run_stream(const Checkpoint& ckpt, const LabeledStream& stream, std::ostream& emit);

struct GradcheckRow {
    std::string suite;
    std::string param;
    std::size_t checks = 0;
    double worst = 0.0;
    bool pass = true;
};

struct GradcheckReport {
    std::vector<GradcheckRow> rows;
    double tolerance = 1e-6;
    bool pass() const;
};

// Module suites (attention, encoder, decoder) plus end to end. `corrupt`
// routes the end-to-end loss through an op with a wrong backward rule.
GradcheckReport run_gradcheck(const MaltConfig& cfg, std::size_t samples, bool corrupt = false,
                              double tolerance = 1e-6);

// Variant names: full, no-sparse, no-recurrent, no-aux, N=<n>, k=<k>, fusion=<add|cascade|recurrent>.
MaltConfig apply_variant(MaltConfig cfg, const std::string& variant);

struct AblationRow {
    std::string variant;
    std::uint64_t seed = 0;
    double map = 0.0;
    double mcap = 0.0;
    double accuracy = 0.0;
    std::size_t params = 0;
};

// Each run is evaluated once, after its last epoch, with the given protocol.
std::vector<AblationRow> run_ablation(const MaltConfig& base, const DataSet& data,
                                      const std::vector<std::string>& variants,
                                      const std::vector<std::uint64_t>& seeds, EvalProtocol protocol,
                                      std::size_t stride, std::ostream* log = nullptr);
// Per-variant means; k sweeps also name the best k.
std::string format_ablation(const std::vector<AblationRow>& rows);

}  // namespace malt
