#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mvcl/encoders.hpp"
#include "mvcl/loss.hpp"
#include "mvcl/types.hpp"
#include "mvcl/views.hpp"

namespace mvcl {

struct TrainConfig {
    std::size_t total_steps = 3000;
    std::size_t warmup_steps = 150;
    double base_lr = 1e-3;
    double final_lr = 1e-5;
    std::size_t batch_size = 64;
    std::uint64_t seed = 13;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 1.0;  // global gradient-norm cap; 0 disables
    std::size_t checkpoint_every = 1000;
};

void validate(const TrainConfig& cfg);

/// Linear warmup to base_lr over warmup_steps, then cosine decay to
/// final_lr at total_steps. Endpoints are exact.
double lr_schedule(std::size_t step, const TrainConfig& cfg);

struct ModelConfig {
    ImageEncoderConfig image;
    TextEncoderConfig text;
    LossConfig loss;
};

void validate(const ModelConfig& cfg);

/// The trainable bundle: both encoders plus the temperature scalar.
class Model {
public:
    Model(const ModelConfig& cfg, std::uint64_t init_seed);

    const ModelConfig& config() const { return cfg_; }
    std::uint64_t init_seed() const { return init_seed_; }

    ImageEncoder& image_encoder() { return image_; }
    const ImageEncoder& image_encoder() const { return image_; }
    TextEncoder& text_encoder() { return text_; }
    const TextEncoder& text_encoder() const { return text_; }

    Tensor& tau() { return tau_; }
    const Tensor& tau() const { return tau_; }
    double tau_value() const { return tau_.data()[0]; }
    /// Pull tau back into [tau_min, tau_max] after an optimizer update.
    void clamp_tau();

    /// Trainable tensors in stable order: img.*, txt.*, then tau when it is
    /// learnable. The tensors share storage with the encoders.
    const std::vector<std::pair<std::string, Tensor>>& trainables() const {
        return trainables_;
    }
    /// All persisted tensors: trainables plus tau when it is frozen.
    std::vector<std::pair<std::string, Tensor>> named_tensors() const;

private:
    ModelConfig cfg_;
    std::uint64_t init_seed_;
    ImageEncoder image_;
    TextEncoder text_;
    Tensor tau_;
    std::vector<std::pair<std::string, Tensor>> trainables_;
};

/// One optimization step: view construction, four encoder passes, the
/// multi-view loss, and a clipped Adam update at the scheduled rate. All
/// stochastic draws come from per-step child streams of the run seed, so a
/// run can be bisected and resumed bitwise.
class Trainer {
public:
    Trainer(Model& model, const TrainConfig& cfg, const ViewConfig& views);

    LossBreakdown step(const std::vector<const Sample*>& batch);

    std::size_t current_step() const { return step_; }
    const TrainConfig& config() const { return cfg_; }
    const ViewConfig& view_config() const { return views_; }
    Model& model() { return model_; }

    /// Learning rate the next step() call will apply.
    double next_lr() const { return lr_schedule(step_ + 1, cfg_); }

    /// Adam moment vectors, parallel to model().trainables().
    const std::vector<std::vector<double>>& adam_m() const { return m_; }
    const std::vector<std::vector<double>>& adam_v() const { return v_; }

    /// Restore optimizer state (used by checkpoint resume).
    void restore(std::size_t step, std::vector<std::vector<double>> m,
                 std::vector<std::vector<double>> v);

private:
    Model& model_;
    TrainConfig cfg_;
    ViewConfig views_;
    Rng root_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t step_ = 0;
};

}  // namespace mvcl
