#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "mvcl/data.hpp"
#include "mvcl/trainer.hpp"
#include "mvcl/views.hpp"

namespace mvcl {

/// View policy as written in config files: the tag prompt and separator are
/// carried as text and tokenized against the run's vocabulary when known.
struct ViewsSpec {
    AugmentConfig augment;
    double p_tag = 0.5;
    bool tag_draw_per_sample = false;
    std::string tag_prompt = "the picture contains";
    std::string tag_separator = "and";
    std::size_t max_text_len = 12;
};

/// Tokenize the prompt strings; every prompt/separator word must be known
/// to the vocabulary (an unknown-token tag view would be meaningless).
ViewConfig resolve_views(const ViewsSpec& spec, const Vocab& vocab);

struct DataConfig {
    std::string source = "synth";  // "synth" | "corpus"
    std::string corpus_dir;        // consulted when source == "corpus"
    SynthConfig synth;
    double eval_fraction = 0.2;
    std::uint64_t split_seed = 17;
};

/// The whole run in one document; what training writes next to artifacts.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    ViewsSpec views;
    DataConfig data;
    std::string out_dir = "runs/default";
};

/// Whole-document validation: nested validators plus cross-field checks.
void validate(const RunConfig& cfg);

/// The comparison-suite presets, keyed 'A'..'E':
///   A  cross-modal only (lambda_it = lambda_ti = 1, others 0, p_tag 0)
///   B  A plus tag views (p_tag 0.5)
///   C  A plus the image-image term (lambda_ii 0.5)
///   D  A plus the caption-caption term (lambda_tt 0.5)
///   E  everything enabled
void apply_model_preset(RunConfig& cfg, char model);

/// Parse a JSON document. Absent fields take their defaults; unknown fields
/// and type mismatches are rejected with full field-path diagnostics.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

/// The config with every field written out explicitly. Parsing it back
/// yields the same configuration (byte-stable round trip).
std::string resolved_json(const RunConfig& cfg);

void save_run_config(const RunConfig& cfg, const std::filesystem::path& path);

}  // namespace mvcl
