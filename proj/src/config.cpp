#include "mvcl/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace mvcl {

using nlohmann::json;

ViewConfig resolve_views(const ViewsSpec& spec, const Vocab& vocab) {
    auto tokenize_known = [&](const std::string& text, const char* what) {
        TokenSeq toks = tokenize(text, vocab, spec.max_text_len);
        for (std::size_t i = 0; i < toks.size(); ++i)
            if (toks[i] == Vocab::kUnk)
                throw ConfigError(std::string("views.") + what +
                                  ": word not in vocabulary: '" + text + "'");
        return toks;
    };
    ViewConfig out;
    out.augment = spec.augment;
    out.p_tag = spec.p_tag;
    out.tag_draw_per_sample = spec.tag_draw_per_sample;
    out.tag_prompt = tokenize_known(spec.tag_prompt, "tag_prompt");
    out.tag_separator = tokenize_known(spec.tag_separator, "tag_separator");
    out.max_text_len = spec.max_text_len;
    return out;
}

void validate(const RunConfig& cfg) {
    validate(cfg.model);
    validate(cfg.train);
    validate(cfg.views.augment);
    if (cfg.views.p_tag < 0.0 || cfg.views.p_tag > 1.0)
        throw ConfigError("views.p_tag: must be in [0, 1]");
    if (cfg.views.max_text_len == 0)
        throw ConfigError("views.max_text_len: must be positive");
    if (cfg.views.max_text_len > cfg.model.text.max_len)
        throw ConfigError("views.max_text_len: exceeds model.text.max_len");
    if (cfg.data.source != "synth" && cfg.data.source != "corpus")
        throw ConfigError("data.source: must be 'synth' or 'corpus'");
    if (cfg.data.source == "corpus" && cfg.data.corpus_dir.empty())
        throw ConfigError("data.corpus_dir: required when data.source is 'corpus'");
    if (cfg.data.eval_fraction < 0.0 || cfg.data.eval_fraction >= 1.0)
        throw ConfigError("data.eval_fraction: must be in [0, 1)");
    if (cfg.data.source == "synth") {
        validate(cfg.data.synth);
        if (cfg.data.synth.image_size != cfg.model.image.image_size)
            throw ConfigError(
                "data.synth.image_size: must match model.image.image_size");
    }
    if (cfg.out_dir.empty()) throw ConfigError("out_dir: must not be empty");
}

void apply_model_preset(RunConfig& cfg, char model) {
    LossConfig& l = cfg.model.loss;
    l.lambda_it = 1.0;
    l.lambda_ti = 1.0;
    l.lambda_ii = 0.0;
    l.lambda_tt = 0.0;
    cfg.views.p_tag = 0.0;
    switch (model) {
        case 'A': break;
        case 'B': cfg.views.p_tag = 0.5; break;
        case 'C': l.lambda_ii = 0.5; break;
        case 'D': l.lambda_tt = 0.5; break;
        case 'E':
            l.lambda_ii = 0.5;
            l.lambda_tt = 0.5;
            cfg.views.p_tag = 0.5;
            break;
        default:
            throw ParamError(std::string("unknown model preset '") + model +
                             "' (expected A..E)");
    }
}

// ---- parsing ----------------------------------------------------------------------

namespace {

/// Cursor over one JSON object that remembers its path for diagnostics,
/// tracks which keys were consumed, and funnels unknown-field complaints
/// into a shared list so they can be reported together.
class JsonWalker {
public:
    JsonWalker(const json& node, std::string path, std::vector<std::string>* issues)
        : node_(node), path_(std::move(path)), issues_(issues) {
        if (!node_.is_object())
            throw ConfigError(where() + "expected an object");
    }

    JsonWalker child(const char* key) {
        consumed_.insert(key);
        static const json kEmpty = json::object();
        auto it = node_.find(key);
        if (it == node_.end()) return JsonWalker(kEmpty, join(key), issues_);
        return JsonWalker(*it, join(key), issues_);
    }

    double number(const char* key, double def) {
        const json* v = fetch(key);
        if (!v) return def;
        if (!v->is_number())
            throw ConfigError(join(key) + ": expected a number");
        return v->get<double>();
    }

    std::uint64_t uinteger(const char* key, std::uint64_t def) {
        const json* v = fetch(key);
        if (!v) return def;
        if (!v->is_number_integer() ||
            (v->is_number_integer() && !v->is_number_unsigned() &&
             v->get<std::int64_t>() < 0))
            throw ConfigError(join(key) + ": expected a non-negative integer");
        return v->get<std::uint64_t>();
    }

    int integer(const char* key, int def) {
        const json* v = fetch(key);
        if (!v) return def;
        if (!v->is_number_integer())
            throw ConfigError(join(key) + ": expected an integer");
        return v->get<int>();
    }

    bool boolean(const char* key, bool def) {
        const json* v = fetch(key);
        if (!v) return def;
        if (!v->is_boolean())
            throw ConfigError(join(key) + ": expected true or false");
        return v->get<bool>();
    }

    std::string text(const char* key, std::string def) {
        const json* v = fetch(key);
        if (!v) return def;
        if (!v->is_string())
            throw ConfigError(join(key) + ": expected a string");
        return v->get<std::string>();
    }

    /// Report keys never consumed by any getter.
    void finish() {
        for (auto it = node_.begin(); it != node_.end(); ++it)
            if (!consumed_.count(it.key()))
                issues_->push_back(join(it.key().c_str()) + ": unknown field");
    }

private:
    const json* fetch(const char* key) {
        consumed_.insert(key);
        auto it = node_.find(key);
        return it == node_.end() ? nullptr : &*it;
    }
    std::string join(const char* key) const {
        return path_.empty() ? key : path_ + "." + key;
    }
    std::string where() const { return path_.empty() ? "" : path_ + ": "; }

    const json& node_;
    std::string path_;
    std::set<std::string> consumed_;
    std::vector<std::string>* issues_;
};

ImageEncoderConfig parse_image(JsonWalker w) {
    ImageEncoderConfig c;
    c.image_size = w.uinteger("image_size", c.image_size);
    c.channels = w.uinteger("channels", c.channels);
    c.patch_size = w.uinteger("patch_size", c.patch_size);
    c.hidden_dim = w.uinteger("hidden_dim", c.hidden_dim);
    c.num_layers = w.uinteger("num_layers", c.num_layers);
    c.embed_dim = w.uinteger("embed_dim", c.embed_dim);
    c.mlp_projection = w.boolean("mlp_projection", c.mlp_projection);
    w.finish();
    return c;
}

TextEncoderConfig parse_text(JsonWalker w) {
    TextEncoderConfig c;
    c.vocab_size = w.uinteger("vocab_size", c.vocab_size);
    c.max_len = w.uinteger("max_len", c.max_len);
    c.hidden_dim = w.uinteger("hidden_dim", c.hidden_dim);
    c.num_layers = w.uinteger("num_layers", c.num_layers);
    c.embed_dim = w.uinteger("embed_dim", c.embed_dim);
    c.dropout_p = w.number("dropout_p", c.dropout_p);
    c.mlp_projection = w.boolean("mlp_projection", c.mlp_projection);
    w.finish();
    return c;
}

LossConfig parse_loss(JsonWalker w) {
    LossConfig c;
    c.tau_init = w.number("tau_init", c.tau_init);
    c.tau_learnable = w.boolean("tau_learnable", c.tau_learnable);
    c.tau_min = w.number("tau_min", c.tau_min);
    c.tau_max = w.number("tau_max", c.tau_max);
    c.lambda_ii = w.number("lambda_ii", c.lambda_ii);
    c.lambda_tt = w.number("lambda_tt", c.lambda_tt);
    c.lambda_it = w.number("lambda_it", c.lambda_it);
    c.lambda_ti = w.number("lambda_ti", c.lambda_ti);
    c.extra_symmetric_pairs =
        w.boolean("extra_symmetric_pairs", c.extra_symmetric_pairs);
    w.finish();
    return c;
}

TrainConfig parse_train(JsonWalker w) {
    TrainConfig c;
    c.total_steps = w.uinteger("total_steps", c.total_steps);
    c.warmup_steps = w.uinteger("warmup_steps", c.warmup_steps);
    c.base_lr = w.number("base_lr", c.base_lr);
    c.final_lr = w.number("final_lr", c.final_lr);
    c.batch_size = w.uinteger("batch_size", c.batch_size);
    c.seed = w.uinteger("seed", c.seed);
    c.beta1 = w.number("beta1", c.beta1);
    c.beta2 = w.number("beta2", c.beta2);
    c.eps = w.number("eps", c.eps);
    c.clip_norm = w.number("clip_norm", c.clip_norm);
    c.checkpoint_every = w.uinteger("checkpoint_every", c.checkpoint_every);
    w.finish();
    return c;
}

AugmentConfig parse_augment(JsonWalker w) {
    AugmentConfig c;
    c.crop_scale_lo = w.number("crop_scale_lo", c.crop_scale_lo);
    c.crop_scale_hi = w.number("crop_scale_hi", c.crop_scale_hi);
    c.flip_prob = w.number("flip_prob", c.flip_prob);
    c.jitter_strength = w.number("jitter_strength", c.jitter_strength);
    c.blur_prob = w.number("blur_prob", c.blur_prob);
    c.blur_sigma = w.number("blur_sigma", c.blur_sigma);
    c.grayscale_prob = w.number("grayscale_prob", c.grayscale_prob);
    w.finish();
    return c;
}

ViewsSpec parse_views(JsonWalker w) {
    ViewsSpec c;
    c.augment = parse_augment(w.child("augment"));
    c.p_tag = w.number("p_tag", c.p_tag);
    c.tag_draw_per_sample = w.boolean("tag_draw_per_sample", c.tag_draw_per_sample);
    c.tag_prompt = w.text("tag_prompt", c.tag_prompt);
    c.tag_separator = w.text("tag_separator", c.tag_separator);
    c.max_text_len = w.uinteger("max_text_len", c.max_text_len);
    w.finish();
    return c;
}

SynthConfig parse_synth(JsonWalker w) {
    SynthConfig c;
    c.n_samples = w.uinteger("n_samples", c.n_samples);
    c.image_size = w.uinteger("image_size", c.image_size);
    c.v_obj = w.integer("v_obj", c.v_obj);
    c.v_attr = w.integer("v_attr", c.v_attr);
    c.caption_noise_rate = w.number("caption_noise_rate", c.caption_noise_rate);
    c.caption_keep_rate = w.number("caption_keep_rate", c.caption_keep_rate);
    c.tag_coverage = w.number("tag_coverage", c.tag_coverage);
    c.seed = w.uinteger("seed", c.seed);
    w.finish();
    return c;
}

DataConfig parse_data(JsonWalker w) {
    DataConfig c;
    c.source = w.text("source", c.source);
    c.corpus_dir = w.text("corpus_dir", c.corpus_dir);
    c.synth = parse_synth(w.child("synth"));
    c.eval_fraction = w.number("eval_fraction", c.eval_fraction);
    c.split_seed = w.uinteger("split_seed", c.split_seed);
    w.finish();
    return c;
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    std::vector<std::string> issues;
    JsonWalker root(doc, "", &issues);

    RunConfig cfg;
    JsonWalker model = root.child("model");
    cfg.model.image = parse_image(model.child("image"));
    cfg.model.text = parse_text(model.child("text"));
    cfg.model.loss = parse_loss(model.child("loss"));
    model.finish();
    cfg.train = parse_train(root.child("train"));
    cfg.views = parse_views(root.child("views"));
    cfg.data = parse_data(root.child("data"));
    cfg.out_dir = root.text("out_dir", cfg.out_dir);
    root.finish();

    if (!issues.empty()) {
        std::string msg = "config: ";
        for (std::size_t i = 0; i < issues.size(); ++i)
            msg += (i ? "; " : "") + issues[i];
        throw ConfigError(msg);
    }
    validate(cfg);
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("config: cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str());
}

std::string resolved_json(const RunConfig& cfg) {
    nlohmann::ordered_json j;
    nlohmann::ordered_json image;
    image["image_size"] = cfg.model.image.image_size;
    image["channels"] = cfg.model.image.channels;
    image["patch_size"] = cfg.model.image.patch_size;
    image["hidden_dim"] = cfg.model.image.hidden_dim;
    image["num_layers"] = cfg.model.image.num_layers;
    image["embed_dim"] = cfg.model.image.embed_dim;
    image["mlp_projection"] = cfg.model.image.mlp_projection;
    nlohmann::ordered_json text;
    text["vocab_size"] = cfg.model.text.vocab_size;
    text["max_len"] = cfg.model.text.max_len;
    text["hidden_dim"] = cfg.model.text.hidden_dim;
    text["num_layers"] = cfg.model.text.num_layers;
    text["embed_dim"] = cfg.model.text.embed_dim;
    text["dropout_p"] = cfg.model.text.dropout_p;
    text["mlp_projection"] = cfg.model.text.mlp_projection;
    nlohmann::ordered_json loss;
    loss["tau_init"] = cfg.model.loss.tau_init;
    loss["tau_learnable"] = cfg.model.loss.tau_learnable;
    loss["tau_min"] = cfg.model.loss.tau_min;
    loss["tau_max"] = cfg.model.loss.tau_max;
    loss["lambda_ii"] = cfg.model.loss.lambda_ii;
    loss["lambda_tt"] = cfg.model.loss.lambda_tt;
    loss["lambda_it"] = cfg.model.loss.lambda_it;
    loss["lambda_ti"] = cfg.model.loss.lambda_ti;
    loss["extra_symmetric_pairs"] = cfg.model.loss.extra_symmetric_pairs;
    j["model"] = {{"image", image}, {"text", text}, {"loss", loss}};

    nlohmann::ordered_json train;
    train["total_steps"] = cfg.train.total_steps;
    train["warmup_steps"] = cfg.train.warmup_steps;
    train["base_lr"] = cfg.train.base_lr;
    train["final_lr"] = cfg.train.final_lr;
    train["batch_size"] = cfg.train.batch_size;
    train["seed"] = cfg.train.seed;
    train["beta1"] = cfg.train.beta1;
    train["beta2"] = cfg.train.beta2;
    train["eps"] = cfg.train.eps;
    train["clip_norm"] = cfg.train.clip_norm;
    train["checkpoint_every"] = cfg.train.checkpoint_every;
    j["train"] = train;

    nlohmann::ordered_json augment;
    augment["crop_scale_lo"] = cfg.views.augment.crop_scale_lo;
    augment["crop_scale_hi"] = cfg.views.augment.crop_scale_hi;
    augment["flip_prob"] = cfg.views.augment.flip_prob;
    augment["jitter_strength"] = cfg.views.augment.jitter_strength;
    augment["blur_prob"] = cfg.views.augment.blur_prob;
    augment["blur_sigma"] = cfg.views.augment.blur_sigma;
    augment["grayscale_prob"] = cfg.views.augment.grayscale_prob;
    nlohmann::ordered_json views;
    views["augment"] = augment;
    views["p_tag"] = cfg.views.p_tag;
    views["tag_draw_per_sample"] = cfg.views.tag_draw_per_sample;
    views["tag_prompt"] = cfg.views.tag_prompt;
    views["tag_separator"] = cfg.views.tag_separator;
    views["max_text_len"] = cfg.views.max_text_len;
    j["views"] = views;

    nlohmann::ordered_json synth;
    synth["n_samples"] = cfg.data.synth.n_samples;
    synth["image_size"] = cfg.data.synth.image_size;
    synth["v_obj"] = cfg.data.synth.v_obj;
    synth["v_attr"] = cfg.data.synth.v_attr;
    synth["caption_noise_rate"] = cfg.data.synth.caption_noise_rate;
    synth["caption_keep_rate"] = cfg.data.synth.caption_keep_rate;
    synth["tag_coverage"] = cfg.data.synth.tag_coverage;
    synth["seed"] = cfg.data.synth.seed;
    nlohmann::ordered_json data;
    data["source"] = cfg.data.source;
    data["corpus_dir"] = cfg.data.corpus_dir;
    data["synth"] = synth;
    data["eval_fraction"] = cfg.data.eval_fraction;
    data["split_seed"] = cfg.data.split_seed;
    j["data"] = data;

    j["out_dir"] = cfg.out_dir;
    return j.dump(2) + "\n";
}

void save_run_config(const RunConfig& cfg, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("config: cannot write " + path.string());
    out << resolved_json(cfg);
    if (!out) throw IoError("config: failed writing " + path.string());
}

}  // namespace mvcl
