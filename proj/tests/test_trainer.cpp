#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numbers>
#include <vector>

#include "mvcl/data.hpp"
#include "mvcl/trainer.hpp"

using namespace mvcl;

namespace {

TrainConfig small_train(std::size_t batch, std::size_t total,
                        std::size_t warmup, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.batch_size = batch;
    cfg.total_steps = total;
    cfg.warmup_steps = warmup;
    cfg.seed = seed;
    return cfg;
}

ViewConfig test_views() {
    ViewConfig v;
    v.tag_prompt = {2, 3, 4};
    v.tag_separator = {5};
    return v;
}

Dataset tiny_dataset(std::size_t n, std::uint64_t seed) {
    SynthConfig cfg;
    cfg.n_samples = n;
    cfg.seed = seed;
    return synth_generate(cfg);
}

std::vector<const Sample*> take(const Dataset& ds, std::size_t start,
                                std::size_t n) {
    std::vector<const Sample*> out;
    for (std::size_t i = 0; i < n; ++i)
        out.push_back(&ds.samples[(start + i) % ds.samples.size()]);
    return out;
}

std::vector<std::vector<double>> snapshot(const Model& model) {
    std::vector<std::vector<double>> out;
    for (const auto& [name, t] : model.trainables()) out.push_back(t.to_vector());
    return out;
}

}  // namespace

// ---- lr schedule -----------------------------------------------------------------

TEST_CASE("lr endpoints are exact") {
    TrainConfig cfg;  // base 1e-3, final 1e-5, warmup 150, total 3000
    CHECK(lr_schedule(0, cfg) == 0.0);
    CHECK(lr_schedule(cfg.warmup_steps, cfg) == cfg.base_lr);
    CHECK(lr_schedule(cfg.total_steps, cfg) == cfg.final_lr);
}

TEST_CASE("warmup is linear") {
    TrainConfig cfg;
    CHECK(lr_schedule(75, cfg) == doctest::Approx(cfg.base_lr * 0.5).epsilon(1e-15));
    CHECK(lr_schedule(30, cfg) == doctest::Approx(cfg.base_lr * 0.2).epsilon(1e-15));
    // equal spacing: consecutive warmup increments are constant
    const double d1 = lr_schedule(50, cfg) - lr_schedule(49, cfg);
    const double d2 = lr_schedule(100, cfg) - lr_schedule(99, cfg);
    CHECK(d1 == doctest::Approx(d2).epsilon(1e-12));
}

TEST_CASE("cosine midpoint hits the arithmetic mean") {
    // Halfway through the decay the cosine term vanishes, so the rate is
    // exactly (base + final) / 2: here 1e-6 + 9.9e-5 * 0.5 = 5.05e-5.
    TrainConfig cfg;
    cfg.base_lr = 1e-4;
    cfg.final_lr = 1e-6;
    cfg.warmup_steps = 2000;
    cfg.total_steps = 90000;
    CHECK(std::abs(lr_schedule(46000, cfg) - 5.05e-5) < 1e-12);
}

TEST_CASE("cosine quarter point matches the closed form") {
    // progress 1/4: lr = final + (base - final) * (1 + cos(pi/4)) / 2
    TrainConfig cfg;
    cfg.base_lr = 2e-3;
    cfg.final_lr = 2e-4;
    cfg.warmup_steps = 100;
    cfg.total_steps = 900;
    const double expect =
        2e-4 + 1.8e-3 * 0.5 * (1.0 + std::sqrt(2.0) / 2.0);
    CHECK(std::abs(lr_schedule(300, cfg) - expect) < 1e-15);
}

TEST_CASE("schedule is continuous at the warmup boundary") {
    TrainConfig cfg;
    const double before = lr_schedule(cfg.warmup_steps - 1, cfg);
    const double at = lr_schedule(cfg.warmup_steps, cfg);
    const double after = lr_schedule(cfg.warmup_steps + 1, cfg);
    CHECK(std::abs(at - before) < cfg.base_lr * 0.01);
    CHECK(std::abs(after - at) < cfg.base_lr * 0.01);
}

TEST_CASE("decay is monotone non-increasing") {
    TrainConfig cfg;
    double prev = lr_schedule(cfg.warmup_steps, cfg);
    for (std::size_t s = cfg.warmup_steps + 1; s <= cfg.total_steps; ++s) {
        const double cur = lr_schedule(s, cfg);
        CHECK(cur <= prev + 1e-18);
        prev = cur;
    }
    CHECK(prev == cfg.final_lr);
}

TEST_CASE("schedule rejects steps beyond the run") {
    TrainConfig cfg;
    CHECK_THROWS_AS(lr_schedule(cfg.total_steps + 1, cfg), ParamError);
}

// ---- config validation -----------------------------------------------------------

TEST_CASE("train config validation rejects bad fields") {
    TrainConfig good;
    CHECK_NOTHROW(validate(good));

    TrainConfig c = good;
    c.warmup_steps = c.total_steps;
    CHECK_THROWS_AS(validate(c), ConfigError);

    c = good;
    c.final_lr = c.base_lr;
    CHECK_THROWS_AS(validate(c), ConfigError);

    c = good;
    c.final_lr = 0.0;
    CHECK_THROWS_AS(validate(c), ConfigError);

    c = good;
    c.batch_size = 1;
    CHECK_THROWS_AS(validate(c), ConfigError);

    c = good;
    c.beta1 = 1.0;
    CHECK_THROWS_AS(validate(c), ConfigError);

    c = good;
    c.beta2 = -0.1;
    CHECK_THROWS_AS(validate(c), ConfigError);

    c = good;
    c.eps = 0.0;
    CHECK_THROWS_AS(validate(c), ConfigError);

    c = good;
    c.clip_norm = -1.0;
    CHECK_THROWS_AS(validate(c), ConfigError);

    c = good;
    c.checkpoint_every = 0;
    CHECK_THROWS_AS(validate(c), ConfigError);
}

TEST_CASE("model config requires matching embed dims") {
    ModelConfig cfg;
    cfg.text.embed_dim = cfg.image.embed_dim + 1;
    CHECK_THROWS_AS(validate(cfg), ConfigError);
}

// ---- model bundle ----------------------------------------------------------------

TEST_CASE("trainables are ordered img, txt, tau") {
    Model model(ModelConfig{}, 3);
    const auto& names = model.trainables();
    REQUIRE(!names.empty());
    CHECK(names.back().first == "tau");
    bool seen_txt = false;
    for (std::size_t i = 0; i + 1 < names.size(); ++i) {
        const std::string& n = names[i].first;
        if (n.rfind("txt.", 0) == 0) seen_txt = true;
        if (n.rfind("img.", 0) == 0) CHECK(!seen_txt);  // img block first
        CHECK((n.rfind("img.", 0) == 0 || n.rfind("txt.", 0) == 0));
    }
}

TEST_CASE("frozen tau leaves trainables but stays persisted") {
    ModelConfig cfg;
    cfg.loss.tau_learnable = false;
    Model model(cfg, 3);
    for (const auto& [name, t] : model.trainables()) CHECK(name != "tau");
    bool found = false;
    for (const auto& [name, t] : model.named_tensors())
        if (name == "tau") found = true;
    CHECK(found);
}

TEST_CASE("same init seed reproduces parameters, different seed does not") {
    Model a(ModelConfig{}, 17);
    Model b(ModelConfig{}, 17);
    Model c(ModelConfig{}, 18);
    const auto& ta = a.trainables();
    const auto& tb = b.trainables();
    const auto& tc = c.trainables();
    REQUIRE(ta.size() == tb.size());
    bool any_diff = false;
    for (std::size_t i = 0; i < ta.size(); ++i) {
        CHECK(ta[i].second.to_vector() == tb[i].second.to_vector());
        if (ta[i].second.to_vector() != tc[i].second.to_vector()) any_diff = true;
    }
    CHECK(any_diff);
}

TEST_CASE("clamp_tau pulls the scalar into range") {
    Model model(ModelConfig{}, 3);
    model.tau().data()[0] = 10.0;
    model.clamp_tau();
    CHECK(model.tau_value() == model.config().loss.tau_max);
    model.tau().data()[0] = 1e-9;
    model.clamp_tau();
    CHECK(model.tau_value() == model.config().loss.tau_min);
}

// ---- training steps --------------------------------------------------------------

TEST_CASE("identical seeds give bitwise identical runs") {
    Dataset ds = tiny_dataset(24, 40);
    auto run = [&](std::vector<double>& losses) {
        Model model(ModelConfig{}, 5);
        Trainer tr(model, small_train(6, 10, 2, 9), test_views());
        for (std::size_t s = 0; s < 4; ++s) {
            LossBreakdown lb = tr.step(take(ds, 6 * s, 6));
            losses.push_back(lb.total);
            for (PairType p : kPairTypes) losses.push_back(lb.at(p));
        }
        for (const auto& [name, t] : model.trainables())
            for (double v : t.to_vector()) losses.push_back(v);
    };
    std::vector<double> first, second;
    run(first);
    run(second);
    CHECK(std::memcmp(first.data(), second.data(),
                      first.size() * sizeof(double)) == 0);
    CHECK(first.size() == second.size());
}

TEST_CASE("zero loss weights leave every parameter untouched") {
    Dataset ds = tiny_dataset(16, 41);
    ModelConfig mcfg;
    mcfg.loss.lambda_ii = 0.0;
    mcfg.loss.lambda_tt = 0.0;
    mcfg.loss.lambda_it = 0.0;
    mcfg.loss.lambda_ti = 0.0;
    Model model(mcfg, 5);
    const auto before = snapshot(model);
    Trainer tr(model, small_train(4, 5, 1, 9), test_views());
    LossBreakdown lb = tr.step(take(ds, 0, 4));
    CHECK(lb.total == 0.0);
    const auto after = snapshot(model);
    CHECK(before == after);
}

TEST_CASE("loss falls over a short run") {
    Dataset ds = tiny_dataset(32, 7);
    Model model(ModelConfig{}, 5);
    Trainer tr(model, small_train(8, 200, 20, 11), test_views());
    Rng pick(42);
    std::vector<double> losses;
    for (std::size_t s = 0; s < 200; ++s) {
        std::vector<const Sample*> batch;
        for (std::size_t i = 0; i < 8; ++i)
            batch.push_back(
                &ds.samples[static_cast<std::size_t>(pick.uniform_int(0, 31))]);
        losses.push_back(tr.step(batch).total);
    }
    double head = 0.0, tail = 0.0;
    for (std::size_t i = 0; i < 20; ++i) {
        head += losses[i];
        tail += losses[losses.size() - 1 - i];
    }
    CHECK(tail < 0.6 * head);
    CHECK(tr.current_step() == 200);
}

TEST_CASE("untrained cross-modal loss sits at chance level") {
    // With independently initialized encoders the positive pair carries no
    // signal, so each direction's loss is about ln(batch); the spread of the
    // raw similarities inflates it somewhat, never past a factor of two.
    Dataset ds = tiny_dataset(16, 99);
    ModelConfig mcfg;
    mcfg.loss.lambda_ii = 0.0;
    mcfg.loss.lambda_tt = 0.0;
    const double ln_n = std::log(16.0);
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Model model(mcfg, seed);
        Trainer tr(model, small_train(16, 5, 1, seed + 100), test_views());
        LossBreakdown lb = tr.step(take(ds, 0, 16));
        CHECK(lb.at(PairType::IT) > 0.85 * ln_n);
        CHECK(lb.at(PairType::IT) < 2.0 * ln_n);
        CHECK(lb.at(PairType::TI) > 0.85 * ln_n);
        CHECK(lb.at(PairType::TI) < 2.0 * ln_n);
    }
}

TEST_CASE("adam moments stay finite and sized to the parameters") {
    Dataset ds = tiny_dataset(16, 42);
    Model model(ModelConfig{}, 5);
    Trainer tr(model, small_train(4, 6, 1, 9), test_views());
    for (std::size_t s = 0; s < 3; ++s) tr.step(take(ds, 4 * s, 4));
    const auto& params = model.trainables();
    REQUIRE(tr.adam_m().size() == params.size());
    REQUIRE(tr.adam_v().size() == params.size());
    for (std::size_t p = 0; p < params.size(); ++p) {
        CHECK(tr.adam_m()[p].size() == params[p].second.size());
        CHECK(tr.adam_v()[p].size() == params[p].second.size());
        for (double v : tr.adam_m()[p]) CHECK(std::isfinite(v));
        for (double v : tr.adam_v()[p]) {
            CHECK(std::isfinite(v));
            CHECK(v >= 0.0);
        }
    }
}

TEST_CASE("restored trainer continues bitwise identically") {
    Dataset ds = tiny_dataset(24, 43);
    const std::size_t kSplit = 3, kTotal = 7;

    Model a(ModelConfig{}, 21);
    Trainer ta(a, small_train(6, 10, 2, 33), test_views());
    for (std::size_t s = 0; s < kSplit; ++s) ta.step(take(ds, 6 * s, 6));

    // capture mid-run state
    const auto params = snapshot(a);
    auto m = ta.adam_m();
    auto v = ta.adam_v();

    std::vector<double> rest_a;
    for (std::size_t s = kSplit; s < kTotal; ++s)
        rest_a.push_back(ta.step(take(ds, 6 * s, 6)).total);

    // rebuild from the capture and replay the same batches
    Model b(ModelConfig{}, 21);
    const auto& tb_params = b.trainables();
    for (std::size_t p = 0; p < tb_params.size(); ++p) {
        Tensor t = tb_params[p].second;
        std::copy(params[p].begin(), params[p].end(), t.data());
    }
    Trainer tb(b, small_train(6, 10, 2, 33), test_views());
    tb.restore(kSplit, std::move(m), std::move(v));

    std::vector<double> rest_b;
    for (std::size_t s = kSplit; s < kTotal; ++s)
        rest_b.push_back(tb.step(take(ds, 6 * s, 6)).total);

    CHECK(rest_a == rest_b);
    CHECK(snapshot(a) == snapshot(b));
}

TEST_CASE("restore rejects mismatched moment shapes") {
    Model model(ModelConfig{}, 5);
    Trainer tr(model, small_train(4, 6, 1, 9), test_views());
    auto m = tr.adam_m();
    auto v = tr.adam_v();
    m.pop_back();
    CHECK_THROWS_AS(tr.restore(1, m, v), ParamError);
    m = tr.adam_m();
    m[0].pop_back();
    CHECK_THROWS_AS(tr.restore(1, m, v), ParamError);
}

TEST_CASE("step rejects wrong batch size and exhausted runs") {
    Dataset ds = tiny_dataset(16, 44);
    Model model(ModelConfig{}, 5);
    Trainer tr(model, small_train(4, 2, 1, 9), test_views());
    CHECK_THROWS_AS(tr.step(take(ds, 0, 3)), ShapeError);
    tr.step(take(ds, 0, 4));
    tr.step(take(ds, 4, 4));
    CHECK_THROWS_AS(tr.step(take(ds, 8, 4)), ParamError);
}

TEST_CASE("tau stays inside its clamp range while training") {
    Dataset ds = tiny_dataset(16, 45);
    ModelConfig mcfg;
    Model model(mcfg, 5);
    TrainConfig tcfg = small_train(8, 30, 3, 9);
    tcfg.base_lr = 5e-2;  // aggressive rate to push tau against the clamp
    tcfg.final_lr = 1e-3;
    Trainer tr(model, tcfg, test_views());
    for (std::size_t s = 0; s < 30; ++s) {
        tr.step(take(ds, 8 * s, 8));
        CHECK(model.tau_value() >= mcfg.loss.tau_min);
        CHECK(model.tau_value() <= mcfg.loss.tau_max);
    }
}

TEST_CASE("next_lr reports the upcoming scheduled rate") {
    Model model(ModelConfig{}, 5);
    TrainConfig cfg = small_train(4, 10, 2, 9);
    Trainer tr(model, cfg, test_views());
    CHECK(tr.next_lr() == lr_schedule(1, cfg));
}
