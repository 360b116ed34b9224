#include "mvcl/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace mvcl {

// ---- checkpoint file --------------------------------------------------------------

namespace {

constexpr char kCkptMagic[8] = {'M', 'V', 'C', 'L', 'C', 'K', 'P', '1'};
constexpr std::uint32_t kCkptFormat = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_str(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t read_u32(std::istream& in, const char* what) {
    std::uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
        throw DataError(std::string("checkpoint: truncated at ") + what);
    return v;
}
std::uint64_t read_u64(std::istream& in, const char* what) {
    std::uint64_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
        throw DataError(std::string("checkpoint: truncated at ") + what);
    return v;
}
std::string read_str(std::istream& in, const char* what) {
    const std::uint32_t n = read_u32(in, what);
    std::string s(n, '\0');
    if (n && !in.read(s.data(), n))
        throw DataError(std::string("checkpoint: truncated at ") + what);
    return s;
}

}  // namespace

const CheckpointEntry& Checkpoint::at(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return e;
    throw DataError("checkpoint: no tensor named '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return true;
    return false;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint: cannot write " + path.string());
    out.write(kCkptMagic, sizeof kCkptMagic);
    write_u32(out, kCkptFormat);
    write_str(out, ck.lib_version);
    write_str(out, ck.config_json);
    write_u64(out, ck.step);
    write_u64(out, ck.entries.size());
    for (const auto& e : ck.entries) {
        write_str(out, e.name);
        write_u32(out, static_cast<std::uint32_t>(e.shape.size()));
        for (std::size_t d : e.shape) write_u64(out, d);
        out.write(reinterpret_cast<const char*>(e.values.data()),
                  static_cast<std::streamsize>(e.values.size() * sizeof(double)));
    }
    if (!out) throw IoError("checkpoint: failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open " + path.string());
    char magic[8];
    if (!in.read(magic, sizeof magic) ||
        std::memcmp(magic, kCkptMagic, sizeof magic) != 0)
        throw DataError("checkpoint: " + path.string() +
                        " is not a checkpoint file");
    const std::uint32_t format = read_u32(in, "format version");
    if (format != kCkptFormat)
        throw DataError("checkpoint: format version " + std::to_string(format) +
                        " not supported (expected " +
                        std::to_string(kCkptFormat) + ")");
    Checkpoint ck;
    ck.lib_version = read_str(in, "library version");
    ck.config_json = read_str(in, "config document");
    ck.step = read_u64(in, "step");
    const std::uint64_t n = read_u64(in, "entry count");
    ck.entries.resize(n);
    for (auto& e : ck.entries) {
        e.name = read_str(in, "tensor name");
        const std::uint32_t rank = read_u32(in, "tensor rank");
        e.shape.resize(rank);
        std::size_t numel = 1;
        for (auto& d : e.shape) {
            d = read_u64(in, "tensor dim");
            numel *= d;
        }
        e.values.resize(numel);
        if (numel && !in.read(reinterpret_cast<char*>(e.values.data()),
                              static_cast<std::streamsize>(numel * sizeof(double))))
            throw DataError("checkpoint: truncated tensor '" + e.name + "'");
    }
    return ck;
}

Checkpoint make_checkpoint(const RunConfig& cfg, const Model& model,
                           const Trainer& trainer) {
    Checkpoint ck;
    ck.config_json = resolved_json(cfg);
    ck.step = trainer.current_step();
    for (const auto& [name, t] : model.named_tensors())
        ck.entries.push_back({name, t.shape(), t.to_vector()});
    const auto& params = model.trainables();
    for (std::size_t p = 0; p < params.size(); ++p) {
        ck.entries.push_back({"adam.m/" + params[p].first,
                              {trainer.adam_m()[p].size()},
                              trainer.adam_m()[p]});
        ck.entries.push_back({"adam.v/" + params[p].first,
                              {trainer.adam_v()[p].size()},
                              trainer.adam_v()[p]});
    }
    return ck;
}

namespace {

void load_model_tensors(const Checkpoint& ck, Model& model) {
    for (auto& [name, t] : model.named_tensors()) {
        const CheckpointEntry& e = ck.at(name);
        if (e.shape != t.shape())
            throw DataError("checkpoint: shape mismatch for '" + name + "'");
        std::copy(e.values.begin(), e.values.end(), t.data());
    }
}

}  // namespace

Model model_from_checkpoint(const Checkpoint& ck) {
    RunConfig cfg = parse_run_config(ck.config_json);
    Model model(cfg.model, cfg.train.seed);
    load_model_tensors(ck, model);
    return model;
}

void restore_trainer(const Checkpoint& ck, Trainer& trainer) {
    const auto& params = trainer.model().trainables();
    std::vector<std::vector<double>> m, v;
    for (const auto& [name, t] : params) {
        m.push_back(ck.at("adam.m/" + name).values);
        v.push_back(ck.at("adam.v/" + name).values);
    }
    trainer.restore(ck.step, std::move(m), std::move(v));
}

// ---- dataset + batches ------------------------------------------------------------

Dataset load_run_dataset(const RunConfig& cfg) {
    Dataset ds = cfg.data.source == "synth"
                     ? synth_generate(cfg.data.synth)
                     : load_corpus_dir(cfg.data.corpus_dir,
                                       cfg.model.text.max_len);
    if (ds.vocab.size() > cfg.model.text.vocab_size)
        throw ConfigError("model.text.vocab_size: " +
                          std::to_string(cfg.model.text.vocab_size) +
                          " too small for a vocabulary of " +
                          std::to_string(ds.vocab.size()));
    return ds;
}

std::vector<std::size_t> batch_indices(const TrainConfig& cfg,
                                       const std::vector<std::size_t>& pool,
                                       std::size_t step) {
    if (pool.size() < cfg.batch_size)
        throw DataError("batch: training pool of " + std::to_string(pool.size()) +
                        " smaller than batch size " +
                        std::to_string(cfg.batch_size));
    Rng rng = Rng(cfg.seed).child("batch", step);
    std::vector<std::size_t> out;
    std::set<std::size_t> taken;
    out.reserve(cfg.batch_size);
    while (out.size() < cfg.batch_size) {
        const std::size_t i = pool[rng.bounded(pool.size())];
        if (taken.insert(i).second) out.push_back(i);
    }
    return out;
}

// ---- training lifecycle -----------------------------------------------------------

namespace {

std::string csv_row(std::size_t step, double lr, const LossBreakdown& lb) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  step, lr, lb.total, lb.at(PairType::II), lb.at(PairType::TT),
                  lb.at(PairType::IT), lb.at(PairType::TI));
    return buf;
}

std::filesystem::path checkpoint_name(const std::filesystem::path& dir,
                                      std::size_t step) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "checkpoint_%06zu.ckpt", step);
    return dir / buf;
}

}  // namespace

TrainResult train_run(const RunConfig& cfg, const Dataset& ds,
                      const std::vector<std::size_t>& train_indices,
                      const std::filesystem::path& resume_from,
                      std::size_t stop_after) {
    validate(cfg);
    const std::filesystem::path out_dir = cfg.out_dir;
    std::filesystem::create_directories(out_dir);

    const ViewConfig views = resolve_views(cfg.views, ds.vocab);
    TrainResult result{Model(cfg.model, cfg.train.seed), {}, {}, 0};
    Trainer trainer(result.model, cfg.train, views);

    if (!resume_from.empty()) {
        Checkpoint ck = load_checkpoint(resume_from);
        if (ck.config_json != resolved_json(cfg))
            throw ConfigError(
                "resume: checkpoint was written under a different "
                "configuration than " +
                resume_from.string());
        load_model_tensors(ck, result.model);
        restore_trainer(ck, trainer);
        result.last_step = trainer.current_step();
    }
    save_run_config(cfg, out_dir / "config.json");

    const auto log_path = out_dir / "loss_log.csv";
    const bool append = !resume_from.empty() && std::filesystem::exists(log_path);
    std::ofstream log(log_path, append ? std::ios::app : std::ios::trunc);
    if (!log) throw IoError("train: cannot write " + log_path.string());
    if (!append) log << "step,lr,total,ii,tt,it,ti\n";

    std::vector<const Sample*> batch(cfg.train.batch_size);
    while (trainer.current_step() < cfg.train.total_steps) {
        const std::size_t step = trainer.current_step();
        const double lr = trainer.next_lr();
        const auto idx = batch_indices(cfg.train, train_indices, step);
        for (std::size_t i = 0; i < idx.size(); ++i)
            batch[i] = &ds.samples[idx[i]];
        const LossBreakdown lb = trainer.step(batch);
        result.losses.push_back(lb);
        log << csv_row(step + 1, lr, lb);
        const std::size_t done = step + 1;
        result.last_step = done;
        if (done % cfg.train.checkpoint_every == 0 &&
            done != cfg.train.total_steps)
            save_checkpoint(make_checkpoint(cfg, result.model, trainer),
                            checkpoint_name(out_dir, done));
        if (stop_after != 0 && done >= stop_after) break;
    }
    log.flush();
    if (!log) throw IoError("train: failed writing " + log_path.string());

    if (trainer.current_step() == cfg.train.total_steps) {
        result.final_checkpoint = out_dir / "checkpoint_final.ckpt";
        save_checkpoint(make_checkpoint(cfg, result.model, trainer),
                        result.final_checkpoint);
    } else if (stop_after != 0) {
        // pause point: persist the state the resume will start from
        save_checkpoint(make_checkpoint(cfg, result.model, trainer),
                        checkpoint_name(out_dir, trainer.current_step()));
    }
    return result;
}

// ---- model comparison -------------------------------------------------------------

const AblationRow& AblationTable::at(char model) const {
    for (const auto& r : rows)
        if (r.model == model) return r;
    throw ParamError(std::string("ablation: no row for model '") + model + "'");
}

std::string AblationTable::to_json() const {
    nlohmann::ordered_json j;
    j["seeds"] = seeds;
    nlohmann::ordered_json models;
    for (const auto& r : rows) {
        nlohmann::ordered_json row;
        row["per_seed"] = r.per_seed;
        row["mean"] = r.mean;
        row["stddev"] = r.stddev;
        models[std::string(1, r.model)] = row;
    }
    j["models"] = models;
    return j.dump(2) + "\n";
}

std::string AblationTable::to_table() const {
    std::ostringstream out;
    char buf[64];
    out << "model     mean      std   per-seed overall mR\n";
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%-5c %8.2f %8.2f  ", r.model, r.mean,
                      r.stddev);
        out << buf;
        for (double v : r.per_seed) {
            std::snprintf(buf, sizeof buf, " %6.2f", v);
            out << buf;
        }
        out << "\n";
    }
    return out.str();
}

std::string AblationTable::to_csv() const {
    std::ostringstream out;
    out << "model,seed,overall_mr\n";
    char buf[64];
    for (const auto& r : rows)
        for (std::size_t i = 0; i < r.per_seed.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%c,%llu,%.17g\n", r.model,
                          static_cast<unsigned long long>(seeds[i]),
                          r.per_seed[i]);
            out << buf;
        }
    return out.str();
}

AblationTable run_ablation(const RunConfig& cfg,
                           const std::vector<std::uint64_t>& seeds,
                           const std::string& models, std::ostream* progress) {
    if (seeds.empty()) throw ParamError("ablation: need at least one seed");
    if (models.empty()) throw ParamError("ablation: need at least one model");
    for (char m : models) {
        RunConfig probe = cfg;
        apply_model_preset(probe, m);  // throws on anything outside A..E
    }
    validate(cfg);

    Dataset ds = load_run_dataset(cfg);
    auto [train_idx, eval_idx] =
        split_indices(ds.samples.size(), cfg.data.eval_fraction,
                      cfg.data.split_seed);
    Dataset held_out = subset_dataset(ds, eval_idx);

    AblationTable table;
    table.seeds = seeds;
    for (char m : models) {
        RunConfig preset = cfg;
        apply_model_preset(preset, m);
        AblationRow row;
        row.model = m;
        for (std::uint64_t seed : seeds) {
            RunConfig run = preset;
            run.train.seed = seed;
            run.out_dir = (std::filesystem::path(cfg.out_dir) /
                           std::string(1, m) / ("seed" + std::to_string(seed)))
                              .string();
            TrainResult res = train_run(run, ds, train_idx);
            RetrievalReport rep = zero_shot_retrieval(res.model, held_out);
            row.per_seed.push_back(100.0 * rep.overall);
            if (progress)
                (*progress) << "model " << m << " seed " << seed
                            << ": overall mR " << row.per_seed.back() << "\n";
        }
        double sum = 0.0;
        for (double v : row.per_seed) sum += v;
        row.mean = sum / static_cast<double>(row.per_seed.size());
        double sq = 0.0;
        for (double v : row.per_seed) sq += (v - row.mean) * (v - row.mean);
        row.stddev = row.per_seed.size() > 1
                         ? std::sqrt(sq / static_cast<double>(
                                              row.per_seed.size() - 1))
                         : 0.0;
        table.rows.push_back(std::move(row));
    }
    return table;
}

}  // namespace mvcl
