#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "mvcl/config.hpp"

using namespace mvcl;

namespace {

std::filesystem::path temp_dir() {
    auto dir = std::filesystem::temp_directory_path() / "mvcl_config_test";
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("empty document yields the default configuration") {
    RunConfig cfg = parse_run_config("{}");
    CHECK(cfg.model.image.embed_dim == 32);
    CHECK(cfg.model.text.hidden_dim == 64);
    CHECK(cfg.model.loss.tau_init == 0.07);
    CHECK(cfg.train.total_steps == 3000);
    CHECK(cfg.train.batch_size == 64);
    CHECK(cfg.views.p_tag == 0.5);
    CHECK(cfg.views.tag_prompt == "the picture contains");
    CHECK(cfg.data.source == "synth");
    CHECK(cfg.data.synth.n_samples == 2000);
    CHECK(cfg.data.eval_fraction == 0.2);
    CHECK(cfg.out_dir == "runs/default");
}

TEST_CASE("resolved config round-trips byte-identically") {
    RunConfig cfg;
    const std::string first = resolved_json(cfg);
    RunConfig re = parse_run_config(first);
    CHECK(resolved_json(re) == first);

    // and for a thoroughly non-default config
    apply_model_preset(cfg, 'E');
    cfg.train.total_steps = 123;
    cfg.train.warmup_steps = 7;
    cfg.train.seed = 987654321;
    cfg.model.text.dropout_p = 0.25;
    cfg.views.augment.blur_prob = 0.0;
    cfg.data.synth.n_samples = 55;
    cfg.out_dir = "runs/exp1";
    const std::string second = resolved_json(cfg);
    CHECK(resolved_json(parse_run_config(second)) == second);
    CHECK(second != first);
}

TEST_CASE("resolved config states every default explicitly") {
    const std::string doc = resolved_json(RunConfig{});
    for (const char* needle :
         {"\"tau_init\": 0.07", "\"lambda_ii\": 0.5", "\"lambda_it\": 1.0",
          "\"total_steps\": 3000", "\"warmup_steps\": 150", "\"batch_size\": 64",
          "\"crop_scale_lo\": 0.6", "\"flip_prob\": 0.5", "\"patch_size\": 4",
          "\"dropout_p\": 0.1", "\"caption_keep_rate\": 0.7",
          "\"tag_coverage\": 1.0", "\"eval_fraction\": 0.2"})
        CHECK_MESSAGE(doc.find(needle) != std::string::npos, needle);
}

TEST_CASE("unknown fields are rejected with their full path") {
    const std::string doc = R"({"model": {"loss": {"lambda_xy": 1.0}}})";
    try {
        parse_run_config(doc);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("model.loss.lambda_xy") !=
              std::string::npos);
    }
}

TEST_CASE("several unknown fields are reported together") {
    const std::string doc = R"({"trian": {}, "views": {"ptag": 0.1}})";
    try {
        parse_run_config(doc);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("trian") != std::string::npos);
        CHECK(msg.find("views.ptag") != std::string::npos);
    }
}

TEST_CASE("type mismatches name the offending field") {
    try {
        parse_run_config(R"({"train": {"batch_size": "many"}})");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("train.batch_size") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_run_config(R"({"train": {"seed": -4}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"model": {"loss": {"tau_learnable": 1}}})"),
                    ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"views": {"tag_prompt": 3}})"),
                    ConfigError);
    CHECK_THROWS_AS(parse_run_config("{"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"([1, 2])"), ConfigError);
}

TEST_CASE("documents are validated as a whole") {
    CHECK_THROWS_AS(parse_run_config(R"({"views": {"p_tag": 1.5}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"views": {"max_text_len": 40}})"),
                    ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"data": {"source": "stream"}})"),
                    ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"data": {"source": "corpus"}})"),
                    ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"data": {"eval_fraction": 1.0}})"),
                    ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"data": {"synth": {"image_size": 8}}})"),
                    ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"out_dir": ""})"), ConfigError);
    CHECK_THROWS_AS(
        parse_run_config(R"({"train": {"warmup_steps": 99, "total_steps": 99}})"),
        ConfigError);
    // corpus source with a directory passes config-level checks
    CHECK_NOTHROW(parse_run_config(
        R"({"data": {"source": "corpus", "corpus_dir": "somewhere"}})"));
}

TEST_CASE("model presets set the advertised knobs") {
    RunConfig base;

    RunConfig a = base;
    apply_model_preset(a, 'A');
    CHECK(a.model.loss.lambda_it == 1.0);
    CHECK(a.model.loss.lambda_ti == 1.0);
    CHECK(a.model.loss.lambda_ii == 0.0);
    CHECK(a.model.loss.lambda_tt == 0.0);
    CHECK(a.views.p_tag == 0.0);

    RunConfig b = base;
    apply_model_preset(b, 'B');
    CHECK(b.views.p_tag == 0.5);
    CHECK(b.model.loss.lambda_ii == 0.0);
    CHECK(b.model.loss.lambda_tt == 0.0);

    RunConfig c = base;
    apply_model_preset(c, 'C');
    CHECK(c.model.loss.lambda_ii == 0.5);
    CHECK(c.model.loss.lambda_tt == 0.0);
    CHECK(c.views.p_tag == 0.0);

    RunConfig d = base;
    apply_model_preset(d, 'D');
    CHECK(d.model.loss.lambda_tt == 0.5);
    CHECK(d.model.loss.lambda_ii == 0.0);
    CHECK(d.views.p_tag == 0.0);

    RunConfig e = base;
    apply_model_preset(e, 'E');
    CHECK(e.model.loss.lambda_ii == 0.5);
    CHECK(e.model.loss.lambda_tt == 0.5);
    CHECK(e.model.loss.lambda_it == 1.0);
    CHECK(e.model.loss.lambda_ti == 1.0);
    CHECK(e.views.p_tag == 0.5);

    RunConfig bad = base;
    CHECK_THROWS_AS(apply_model_preset(bad, 'F'), ParamError);
}

TEST_CASE("view prompts tokenize against the vocabulary") {
    ViewsSpec spec;
    ViewConfig views = resolve_views(spec, Vocab::builtin());
    CHECK(views.tag_prompt == TokenSeq{2, 3, 4});
    CHECK(views.tag_separator == TokenSeq{5});
    CHECK(views.p_tag == spec.p_tag);
    CHECK(views.max_text_len == spec.max_text_len);

    ViewsSpec unknown = spec;
    unknown.tag_prompt = "the zebra contains";
    CHECK_THROWS_AS(resolve_views(unknown, Vocab::builtin()), ConfigError);
}

TEST_CASE("config files load and save through the filesystem") {
    const auto dir = temp_dir();
    const auto path = dir / "run.json";
    RunConfig cfg;
    cfg.train.total_steps = 42;
    cfg.train.warmup_steps = 4;
    save_run_config(cfg, path);
    RunConfig loaded = load_run_config(path);
    CHECK(loaded.train.total_steps == 42);
    CHECK(resolved_json(loaded) == resolved_json(cfg));
    CHECK_THROWS_AS(load_run_config(dir / "absent.json"), IoError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("partial documents override only what they name") {
    const std::string doc = R"({
      "model": {"loss": {"lambda_ii": 0.25}},
      "train": {"batch_size": 16},
      "views": {"augment": {"flip_prob": 0.0}}
    })";
    RunConfig cfg = parse_run_config(doc);
    CHECK(cfg.model.loss.lambda_ii == 0.25);
    CHECK(cfg.model.loss.lambda_it == 1.0);      // untouched default
    CHECK(cfg.train.batch_size == 16);
    CHECK(cfg.train.total_steps == 3000);        // untouched default
    CHECK(cfg.views.augment.flip_prob == 0.0);
    CHECK(cfg.views.augment.blur_prob == 0.2);   // untouched default
}
