#include "mvcl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace mvcl {

void validate(const TrainConfig& cfg) {
    if (cfg.total_steps > 0 && cfg.warmup_steps >= cfg.total_steps)
        throw ConfigError("train: warmup_steps must be below total_steps");
    if (cfg.total_steps == 0 && cfg.warmup_steps != 0)
        throw ConfigError("train: warmup_steps must be 0 when total_steps is 0");
    if (!(cfg.base_lr > cfg.final_lr) || !(cfg.final_lr > 0.0))
        throw ConfigError("train: need base_lr > final_lr > 0");
    if (cfg.batch_size < 2)
        throw ConfigError("train: batch_size must be at least 2");
    if (cfg.beta1 < 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 < 0.0 || cfg.beta2 >= 1.0)
        throw ConfigError("train: betas must be in [0, 1)");
    if (cfg.eps <= 0.0) throw ConfigError("train: eps must be positive");
    if (cfg.clip_norm < 0.0) throw ConfigError("train: clip_norm must be >= 0");
    if (cfg.checkpoint_every == 0)
        throw ConfigError("train: checkpoint_every must be positive");
}

double lr_schedule(std::size_t step, const TrainConfig& cfg) {
    if (step > cfg.total_steps)
        throw ParamError("lr_schedule: step " + std::to_string(step) +
                         " beyond total_steps " + std::to_string(cfg.total_steps));
    if (step < cfg.warmup_steps)
        return cfg.base_lr * static_cast<double>(step) /
               static_cast<double>(cfg.warmup_steps);
    // Exact endpoints by construction, independent of rounding in the
    // cosine expression.
    if (step == cfg.warmup_steps) return cfg.base_lr;
    if (step == cfg.total_steps) return cfg.final_lr;
    const double progress = static_cast<double>(step - cfg.warmup_steps) /
                            static_cast<double>(cfg.total_steps - cfg.warmup_steps);
    return cfg.final_lr + (cfg.base_lr - cfg.final_lr) * 0.5 *
                              (1.0 + std::cos(std::numbers::pi * progress));
}

// ---- model --------------------------------------------------------------------

void validate(const ModelConfig& cfg) {
    validate(cfg.image);
    validate(cfg.text);
    validate(cfg.loss);
    if (cfg.image.embed_dim != cfg.text.embed_dim)
        throw ConfigError("model: encoders must share embed_dim");
}

Model::Model(const ModelConfig& cfg, std::uint64_t init_seed)
    : cfg_(cfg),
      init_seed_(init_seed),
      image_(cfg.image, Rng(init_seed).child("init.img")),
      text_(cfg.text, Rng(init_seed).child("init.txt")) {
    validate(cfg_);
    tau_ = Tensor::from_data({1}, {cfg_.loss.tau_init}, cfg_.loss.tau_learnable);
    for (const auto& name : image_.params().names())
        trainables_.emplace_back("img." + name, image_.params().at(name));
    for (const auto& name : text_.params().names())
        trainables_.emplace_back("txt." + name, text_.params().at(name));
    if (cfg_.loss.tau_learnable) trainables_.emplace_back("tau", tau_);
}

void Model::clamp_tau() {
    double& t = tau_.data()[0];
    t = std::clamp(t, cfg_.loss.tau_min, cfg_.loss.tau_max);
}

std::vector<std::pair<std::string, Tensor>> Model::named_tensors() const {
    auto out = trainables_;
    if (!cfg_.loss.tau_learnable) out.emplace_back("tau", tau_);
    return out;
}

// ---- trainer -------------------------------------------------------------------

Trainer::Trainer(Model& model, const TrainConfig& cfg, const ViewConfig& views)
    : model_(model), cfg_(cfg), views_(views), root_(cfg.seed) {
    validate(cfg_);
    validate(views_.augment);
    for (const auto& [name, t] : model_.trainables()) {
        m_.emplace_back(t.size(), 0.0);
        v_.emplace_back(t.size(), 0.0);
    }
}

void Trainer::restore(std::size_t step, std::vector<std::vector<double>> m,
                      std::vector<std::vector<double>> v) {
    const auto& params = model_.trainables();
    if (m.size() != params.size() || v.size() != params.size())
        throw ParamError("trainer restore: moment count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (m[i].size() != params[i].second.size() ||
            v[i].size() != params[i].second.size())
            throw ParamError("trainer restore: moment shape mismatch for '" +
                             params[i].first + "'");
    step_ = step;
    m_ = std::move(m);
    v_ = std::move(v);
}

LossBreakdown Trainer::step(const std::vector<const Sample*>& batch) {
    if (batch.size() != cfg_.batch_size)
        throw ShapeError("train step: batch size " + std::to_string(batch.size()) +
                         " != configured " + std::to_string(cfg_.batch_size));
    if (step_ >= cfg_.total_steps)
        throw ParamError("train step: all " + std::to_string(cfg_.total_steps) +
                         " steps already taken");

    // Per-step derived streams: resuming at this step re-derives the exact
    // same draws regardless of prior history.
    Rng view_rng = root_.child("views", step_);
    auto bundles = build_batch_views(batch, views_, view_rng);

    std::vector<const Raster*> iv1, iv2;
    std::vector<const TokenSeq*> txt;
    iv1.reserve(bundles.size());
    iv2.reserve(bundles.size());
    txt.reserve(bundles.size());
    for (const auto& b : bundles) {
        iv1.push_back(&b.i_v1);
        iv2.push_back(&b.i_v2);
        txt.push_back(&b.tokens);
    }

    Rng drop_a = root_.child("dropout_a", step_);
    Rng drop_b = root_.child("dropout_b", step_);
    ViewEmbeddings emb;
    emb.i_v1 = model_.image_encoder().forward(iv1);
    emb.i_v2 = model_.image_encoder().forward(iv2);
    emb.t_v1 = model_.text_encoder().forward(txt, true, drop_a);
    emb.t_v2 = model_.text_encoder().forward(txt, true, drop_b);

    const LossConfig& lcfg = model_.config().loss;
    LossBreakdown out = multi_view_loss(emb, lcfg, model_.tau());
    if (!std::isfinite(out.total)) {
        NoGradGuard guard;
        std::ostringstream msg;
        msg << "train step " << step_ << ": non-finite loss " << out.total;
        auto range = [](const Tensor& s) {
            double lo = s.data()[0], hi = s.data()[0];
            for (std::size_t i = 1; i < s.size(); ++i) {
                lo = std::min(lo, s.data()[i]);
                hi = std::max(hi, s.data()[i]);
            }
            return std::make_pair(lo, hi);
        };
        auto [ilo, ihi] = range(similarity_matrix(emb.i_v1, emb.i_v2));
        auto [xlo, xhi] = range(similarity_matrix(emb.i_v1, emb.t_v1));
        msg << "; II sims [" << ilo << ", " << ihi << "]"
            << "; IT sims [" << xlo << ", " << xhi << "]"
            << "; tau " << model_.tau_value();
        throw NumericError(msg.str());
    }

    const auto& params = model_.trainables();
    for (const auto& [name, t] : params) Tensor(t).zero_grad();
    backward(out.total_tensor);

    if (cfg_.clip_norm > 0.0) {
        double sq = 0.0;
        for (const auto& [name, t] : params) {
            const double* g = t.grad();
            for (std::size_t i = 0; i < t.size(); ++i) sq += g[i] * g[i];
        }
        const double norm = std::sqrt(sq);
        if (norm > cfg_.clip_norm) {
            const double s = cfg_.clip_norm / norm;
            for (const auto& [name, t] : params) {
                double* g = Tensor(t).grad();
                for (std::size_t i = 0; i < t.size(); ++i) g[i] *= s;
            }
        }
    }

    const double lr = lr_schedule(step_ + 1, cfg_);
    const double t_count = static_cast<double>(step_ + 1);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_count);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_count);
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor w = params[p].second;  // handle copy; storage is shared
        const double* g = w.grad();
        double* data = w.data();
        double* m = m_[p].data();
        double* v = v_[p].data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            data[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
        if (!w.all_finite())
            throw NumericError("train step " + std::to_string(step_) +
                               ": non-finite values in '" + params[p].first + "'");
    }
    model_.clamp_tau();

    ++step_;
    out.total_tensor = Tensor();  // drop the graph; callers keep plain numbers
    return out;
}

}  // namespace mvcl
