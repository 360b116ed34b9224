#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "mvcl/config.hpp"
#include "mvcl/eval.hpp"
#include "mvcl/trainer.hpp"

namespace mvcl {

inline constexpr const char* kLibVersion = "0.1.0";

/// One persisted tensor: name, shape, raw values.
struct CheckpointEntry {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

/// Everything needed to rebuild a run mid-flight: the resolved run
/// configuration, the step counter, every model tensor, and the Adam
/// moments ("adam.m/<param>", "adam.v/<param>"). Binary format "MVCLCKP1";
/// save followed by load reproduces the file byte for byte.
struct Checkpoint {
    std::string lib_version = kLibVersion;
    std::string config_json;
    std::uint64_t step = 0;
    std::vector<CheckpointEntry> entries;

    const CheckpointEntry& at(const std::string& name) const;
    bool has(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(const RunConfig& cfg, const Model& model,
                           const Trainer& trainer);

/// Rebuild the model a checkpoint was written from (configuration comes
/// from the embedded document; every tensor is overwritten from the file).
Model model_from_checkpoint(const Checkpoint& ck);

/// Load the moments and step counter into a trainer whose model the
/// checkpoint describes.
void restore_trainer(const Checkpoint& ck, Trainer& trainer);

/// Materialize the dataset a config names: synthetic generation or a
/// corpus directory.
Dataset load_run_dataset(const RunConfig& cfg);

/// Per-step training-batch sample indices: drawn without replacement from
/// the training split by a stream derived from (train seed, step), so any
/// step's batch can be re-derived in isolation.
std::vector<std::size_t> batch_indices(const TrainConfig& cfg,
                                       const std::vector<std::size_t>& pool,
                                       std::size_t step);

struct TrainResult {
    Model model;
    /// Rows appended to the loss log by this call (resumed steps excluded).
    std::vector<LossBreakdown> losses;
    std::filesystem::path final_checkpoint;  // written when the run finishes
    std::size_t last_step = 0;
};

/// The full training lifecycle under cfg.out_dir: writes config.json, the
/// per-step loss_log.csv, a checkpoint every checkpoint_every steps and at
/// the end. `resume_from` continues a run from a checkpoint written with an
/// identical configuration, appending to the directory's existing log.
/// `stop_after` > 0 pauses the run after that step (for later resume).
TrainResult train_run(const RunConfig& cfg, const Dataset& ds,
                      const std::vector<std::size_t>& train_indices,
                      const std::filesystem::path& resume_from = {},
                      std::size_t stop_after = 0);

/// One row of the model-comparison table: overall held-out mean recall per
/// seed, in percent points, with mean and sample standard deviation.
struct AblationRow {
    char model = 'A';
    std::vector<double> per_seed;
    double mean = 0.0;
    double stddev = 0.0;
};

struct AblationTable {
    std::vector<AblationRow> rows;
    std::vector<std::uint64_t> seeds;

    const AblationRow& at(char model) const;
    std::string to_json() const;
    std::string to_table() const;
    std::string to_csv() const;
};

/// Train every requested preset once per seed on one shared dataset and
/// score the held-out split. Artifacts land under cfg.out_dir; `progress`
/// (when given) receives one line per finished run.
AblationTable run_ablation(const RunConfig& cfg,
                           const std::vector<std::uint64_t>& seeds,
                           const std::string& models = "ABCDE",
                           std::ostream* progress = nullptr);

}  // namespace mvcl
