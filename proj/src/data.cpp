#include "mvcl/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <tuple>

#include <json.hpp>

namespace mvcl {

namespace {
using nlohmann::json;

// Builtin vocabulary layout: specials, prompt words, connective, colors, shapes.
constexpr int kColorBase = 6;
constexpr int kShapeBase = 12;
constexpr int kMaxColors = 6;
constexpr int kMaxShapes = 4;
}  // namespace

// ---- Vocab -------------------------------------------------------------------

Vocab::Vocab(std::vector<std::string> words) : words_(std::move(words)) {
    for (std::size_t i = 0; i < words_.size(); ++i) {
        if (words_[i].empty())
            throw DataError("vocab: empty token at line " + std::to_string(i));
        auto [it, fresh] = index_.emplace(words_[i], static_cast<int>(i));
        if (!fresh)
            throw DataError("vocab: duplicate token '" + words_[i] + "'");
    }
    if (words_.size() < 2)
        throw DataError("vocab: needs at least the <pad> and <unk> entries");
}

Vocab Vocab::builtin() {
    return Vocab({"<pad>", "<unk>", "the", "picture", "contains", "and",
                  "red", "green", "blue", "yellow", "purple", "orange",
                  "square", "disc", "triangle", "cross"});
}

Vocab Vocab::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("vocab: cannot open " + path.string());
    std::vector<std::string> words;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        words.push_back(line);
    }
    return Vocab(std::move(words));
}

void Vocab::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("vocab: cannot write " + path.string());
    for (const auto& w : words_) out << w << '\n';
    if (!out) throw IoError("vocab: failed writing " + path.string());
}

int Vocab::id(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::word(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= words_.size())
        throw DataError("vocab: id " + std::to_string(id) + " out of range");
    return words_[static_cast<std::size_t>(id)];
}

TokenSeq tokenize(const std::string& text, const Vocab& vocab,
                  std::size_t max_len) {
    TokenSeq out;
    std::string word;
    std::istringstream ss(text);
    while (ss >> word && out.size() < max_len) {
        for (char& c : word)
            c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        out.push_back(vocab.id(word));
    }
    return out;
}

std::string detokenize(const TokenSeq& toks, const Vocab& vocab) {
    std::string out;
    for (std::size_t i = 0; i < toks.size(); ++i) {
        if (i) out += ' ';
        out += vocab.word(toks[i]);
    }
    return out;
}

// ---- synthetic generation ----------------------------------------------------

void validate(const SynthConfig& cfg) {
    if (cfg.image_size < 8 || cfg.image_size % 2 != 0)
        throw ParamError("synth: image_size must be even and at least 8");
    if (cfg.v_obj < 1 || cfg.v_obj > kMaxShapes)
        throw ParamError("synth: v_obj must be in [1, " + std::to_string(kMaxShapes) + "]");
    if (cfg.v_attr < 1 || cfg.v_attr > kMaxColors)
        throw ParamError("synth: v_attr must be in [1, " + std::to_string(kMaxColors) + "]");
    auto prob = [](double p, const char* name) {
        if (p < 0.0 || p > 1.0)
            throw ParamError(std::string("synth: ") + name + " must be in [0, 1]");
    };
    prob(cfg.caption_noise_rate, "caption_noise_rate");
    prob(cfg.caption_keep_rate, "caption_keep_rate");
    prob(cfg.tag_coverage, "tag_coverage");
}

namespace {

constexpr double kColors[kMaxColors][3] = {
    {1.0, 0.0, 0.0},  // red
    {0.0, 1.0, 0.0},  // green
    {0.0, 0.0, 1.0},  // blue
    {1.0, 1.0, 0.0},  // yellow
    {0.6, 0.0, 0.8},  // purple
    {1.0, 0.5, 0.0},  // orange
};

/// Shape membership inside an n x n quadrant cell, local coordinates.
bool in_shape(int shape, std::size_t r, std::size_t c, std::size_t n) {
    const double mid = (static_cast<double>(n) - 1.0) / 2.0;
    switch (shape) {
        case 0:  // square: filled block with a 1-pixel margin
            return r >= 1 && r + 1 < n && c >= 1 && c + 1 < n;
        case 1: {  // disc
            const double dr = static_cast<double>(r) - mid;
            const double dc = static_cast<double>(c) - mid;
            const double rad = static_cast<double>(n) / 2.0 - 1.0;
            return dr * dr + dc * dc <= rad * rad + 0.5;
        }
        case 2:  // triangle: lower-left half of the margin box
            return r >= 1 && r + 1 < n && c >= 1 && c <= r;
        case 3: {  // cross: centered horizontal and vertical bars
            const bool hband = r >= n / 2 - 1 && r <= n / 2 && c >= 1 && c + 1 < n;
            const bool vband = c >= n / 2 - 1 && c <= n / 2 && r >= 1 && r + 1 < n;
            return hband || vband;
        }
        default:
            throw ParamError("render: unknown shape id " + std::to_string(shape));
    }
}

/// Quantize to the 8-bit grid the raster files use, keeping generated
/// datasets exactly representable on disk.
double quantize8(double v) { return std::round(v * 255.0) / 255.0; }

std::vector<LatentFactor> draw_factors(const SynthConfig& cfg, Rng& rng) {
    const std::size_t count = 1 + rng.bounded(3);
    std::vector<LatentFactor> fs(count);
    for (auto& f : fs) {
        f.object_id = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(cfg.v_obj)));
        f.attribute_id = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(cfg.v_attr)));
        f.position = static_cast<int>(rng.bounded(4));
        f.distractor_noise = rng.uniform();
    }
    return fs;
}

TokenSeq factor_phrase(const LatentFactor& f) {
    return {kColorBase + f.attribute_id, kShapeBase + f.object_id};
}

}  // namespace

void render_factor(Raster& img, const LatentFactor& f) {
    const std::size_t cell = img.height / 2;
    const std::size_t row0 = (f.position / 2) * cell;
    const std::size_t col0 = (f.position % 2) * cell;
    const double* color = kColors[f.attribute_id];
    for (std::size_t r = 0; r < cell; ++r)
        for (std::size_t c = 0; c < cell; ++c)
            if (in_shape(f.object_id, r, c, cell))
                for (std::size_t k = 0; k < img.channels; ++k)
                    img.at(row0 + r, col0 + c, k) = color[k % 3];
}

Dataset synth_generate(const SynthConfig& cfg) {
    validate(cfg);
    Dataset ds;
    ds.vocab = Vocab::builtin();
    ds.samples.resize(cfg.n_samples);
    ds.gt.relevant.resize(cfg.n_samples);

    const int and_id = ds.vocab.id("and");
    const int word_lo = 2;  // corruption replaces with any non-special word
    const int word_hi = static_cast<int>(ds.vocab.size()) - 1;

    Rng root(cfg.seed);
    std::map<std::vector<std::tuple<int, int, int>>, int> group_ids;
    std::vector<std::vector<int>> group_members;

    for (std::size_t i = 0; i < cfg.n_samples; ++i) {
        Rng rng = root.child("sample", i);
        Sample& s = ds.samples[i];
        {
            std::ostringstream id;
            id << 's' << std::setw(6) << std::setfill('0') << i;
            s.id = id.str();
        }

        const auto factors = draw_factors(cfg, rng);

        // Image: glyphs painted in factor order, then noise, then the
        // 8-bit quantization that the raster files use.
        s.image = Raster(cfg.image_size, cfg.image_size, 3);
        double noise_level = 0.0;
        for (const auto& f : factors) {
            render_factor(s.image, f);
            noise_level += f.distractor_noise;
        }
        noise_level = 0.02 + 0.08 * (noise_level / static_cast<double>(factors.size()));
        for (double& v : s.image.pix) {
            v += rng.uniform(-noise_level, noise_level);
            v = quantize8(std::clamp(v, 0.0, 1.0));
        }

        // Caption: a random subset of factors, then token corruption.
        std::vector<std::size_t> named;
        for (std::size_t k = 0; k < factors.size(); ++k)
            if (rng.bernoulli(cfg.caption_keep_rate)) named.push_back(k);
        if (named.empty())
            named.push_back(static_cast<std::size_t>(rng.bounded(factors.size())));
        for (std::size_t k = 0; k < named.size(); ++k) {
            if (k) s.caption.push_back(and_id);
            const TokenSeq phrase = factor_phrase(factors[named[k]]);
            s.caption.insert(s.caption.end(), phrase.begin(), phrase.end());
        }
        for (int& tok : s.caption)
            if (rng.bernoulli(cfg.caption_noise_rate))
                tok = static_cast<int>(rng.uniform_int(word_lo, word_hi));

        // Tags: clean detector-style phrases, one per covered factor.
        for (const auto& f : factors)
            if (rng.bernoulli(cfg.tag_coverage)) s.tags.push_back(factor_phrase(f));

        // Group by the factor multiset (noise excluded).
        std::vector<std::tuple<int, int, int>> key;
        key.reserve(factors.size());
        for (const auto& f : factors)
            key.emplace_back(f.object_id, f.attribute_id, f.position);
        std::sort(key.begin(), key.end());
        auto [it, fresh] = group_ids.emplace(std::move(key),
                                             static_cast<int>(group_members.size()));
        if (fresh) group_members.emplace_back();
        s.group = it->second;
        group_members[static_cast<std::size_t>(s.group)].push_back(static_cast<int>(i));
    }

    for (std::size_t i = 0; i < cfg.n_samples; ++i)
        ds.gt.relevant[i] =
            group_members[static_cast<std::size_t>(ds.samples[i].group)];
    return ds;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>>
split_indices(std::size_t n, double eval_fraction, std::uint64_t seed) {
    if (eval_fraction < 0.0 || eval_fraction > 1.0)
        throw ParamError("split: eval_fraction must be in [0, 1]");
    Rng rng(mix64(seed, hash64("split")));
    auto perm = rng.permutation(n);
    const std::size_t n_eval = static_cast<std::size_t>(
        std::llround(eval_fraction * static_cast<double>(n)));
    std::vector<std::size_t> eval(perm.begin(), perm.begin() + n_eval);
    std::vector<std::size_t> train(perm.begin() + n_eval, perm.end());
    std::sort(eval.begin(), eval.end());
    std::sort(train.begin(), train.end());
    return {train, eval};
}

Dataset subset_dataset(const Dataset& ds, const std::vector<std::size_t>& keep) {
    const std::size_t n = ds.samples.size();
    std::vector<int> pos(n, -1);
    Dataset out;
    out.vocab = ds.vocab;
    out.samples.reserve(keep.size());
    for (std::size_t k : keep) {
        if (k >= n)
            throw ParamError("subset: index " + std::to_string(k) +
                             " outside dataset of " + std::to_string(n));
        if (pos[k] != -1)
            throw ParamError("subset: duplicate index " + std::to_string(k));
        pos[k] = static_cast<int>(out.samples.size());
        out.samples.push_back(ds.samples[k]);
    }
    out.gt.relevant.resize(keep.size());
    for (std::size_t i = 0; i < keep.size(); ++i)
        for (int r : ds.gt.relevant[keep[i]])
            if (pos[static_cast<std::size_t>(r)] != -1)
                out.gt.relevant[i].push_back(pos[static_cast<std::size_t>(r)]);
    for (auto& rel : out.gt.relevant) std::sort(rel.begin(), rel.end());
    return out;
}

// ---- raster files --------------------------------------------------------------

void save_ppm(const Raster& img, const std::filesystem::path& path) {
    if (img.channels != 3 && img.channels != 1)
        throw DataError("raster: only 1- or 3-channel images supported");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("raster: cannot write " + path.string());
    out << (img.channels == 3 ? "P6" : "P5") << '\n'
        << img.width << ' ' << img.height << '\n'
        << 255 << '\n';
    std::vector<unsigned char> bytes;
    bytes.reserve(img.pix.size());
    for (double v : img.pix)
        bytes.push_back(static_cast<unsigned char>(
            std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("raster: failed writing " + path.string());
}

namespace {

/// Read one whitespace-delimited header token, skipping '#' comments.
std::string ppm_token(std::istream& in) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {}
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    return tok;
}

}  // namespace

Raster load_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("raster: cannot open " + path.string());
    const std::string magic = ppm_token(in);
    std::size_t channels;
    if (magic == "P6")
        channels = 3;
    else if (magic == "P5")
        channels = 1;
    else
        throw DataError("raster: unsupported format '" + magic + "' in " + path.string());
    std::size_t w, h;
    int maxval;
    try {
        w = std::stoul(ppm_token(in));
        h = std::stoul(ppm_token(in));
        maxval = std::stoi(ppm_token(in));
    } catch (const std::exception&) {
        throw DataError("raster: malformed header in " + path.string());
    }
    if (w == 0 || h == 0 || maxval != 255)
        throw DataError("raster: unsupported dimensions or depth in " + path.string());

    Raster img(h, w, channels);
    std::vector<unsigned char> bytes(img.pix.size());
    in.read(reinterpret_cast<char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
        throw DataError("raster: short pixel data in " + path.string());
    for (std::size_t i = 0; i < bytes.size(); ++i)
        img.pix[i] = static_cast<double>(bytes[i]) / 255.0;
    return img;
}

// ---- ground truth ---------------------------------------------------------------

void save_gt(const GroundTruth& gt, const std::filesystem::path& path) {
    json j;
    j["schema"] = 1;
    j["relevant"] = gt.relevant;
    std::ofstream out(path);
    if (!out) throw IoError("gt: cannot write " + path.string());
    out << j.dump(1) << '\n';
    if (!out) throw IoError("gt: failed writing " + path.string());
}

GroundTruth load_gt(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("gt: cannot open " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("gt: invalid JSON in " + path.string() + ": " + e.what());
    }
    if (!j.is_object() || j.value("schema", 0) != 1 || !j.contains("relevant"))
        throw DataError("gt: unsupported schema in " + path.string());
    GroundTruth gt;
    try {
        gt.relevant = j.at("relevant").get<std::vector<std::vector<int>>>();
    } catch (const json::exception& e) {
        throw DataError("gt: malformed relevance lists in " + path.string() + ": " + e.what());
    }
    return gt;
}

// ---- corpus ----------------------------------------------------------------------

void save_corpus(const Dataset& ds, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir / "images", ec);
    if (ec) throw IoError("corpus: cannot create " + (dir / "images").string());

    ds.vocab.save(dir / "vocab.txt");
    save_gt(ds.gt, dir / "gt.json");

    std::ofstream out(dir / "corpus.jsonl");
    if (!out) throw IoError("corpus: cannot write " + (dir / "corpus.jsonl").string());
    for (const Sample& s : ds.samples) {
        const std::string image_rel = "images/" + s.id + ".ppm";
        save_ppm(s.image, dir / image_rel);
        json rec;
        rec["id"] = s.id;
        rec["image"] = image_rel;
        rec["caption"] = detokenize(s.caption, ds.vocab);
        json tags = json::array();
        for (const TokenSeq& t : s.tags) tags.push_back(detokenize(t, ds.vocab));
        rec["tags"] = std::move(tags);
        rec["group"] = s.group;
        out << rec.dump() << '\n';
    }
    if (!out) throw IoError("corpus: failed writing " + (dir / "corpus.jsonl").string());
}

std::vector<Sample> load_corpus(const std::filesystem::path& jsonl_path,
                                const Vocab& vocab, std::size_t max_len) {
    std::ifstream in(jsonl_path);
    if (!in) throw IoError("corpus: cannot open " + jsonl_path.string());
    const std::filesystem::path base = jsonl_path.parent_path();

    std::vector<Sample> samples;
    std::vector<std::string> problems;
    auto complain = [&](std::size_t line, const std::string& what) {
        problems.push_back("line " + std::to_string(line) + ": " + what);
    };

    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            complain(lineno, std::string("invalid JSON (") + e.what() + ")");
            continue;
        }
        if (!rec.is_object()) {
            complain(lineno, "record is not an object");
            continue;
        }
        bool ok = true;
        for (const auto& [key, _] : rec.items())
            if (key != "id" && key != "image" && key != "caption" && key != "tags" &&
                key != "group") {
                complain(lineno, "unknown field '" + key + "'");
                ok = false;
            }
        if (!rec.contains("image") || !rec.at("image").is_string()) {
            complain(lineno, "missing or non-string field 'image'");
            ok = false;
        }
        if (!rec.contains("caption") || !rec.at("caption").is_string()) {
            complain(lineno, "missing or non-string field 'caption'");
            ok = false;
        }
        if (!ok) continue;

        Sample s;
        s.id = rec.value("id", "line" + std::to_string(lineno));
        s.group = rec.value("group", -1);

        const std::string caption = rec.at("caption").get<std::string>();
        const std::size_t caption_words =
            tokenize(caption, vocab, caption.size() + 1).size();
        if (caption_words == 0) {
            complain(lineno, "empty caption");
            continue;
        }
        if (caption_words > max_len) {
            complain(lineno, "caption longer than " + std::to_string(max_len) +
                                 " tokens");
            continue;
        }
        s.caption = tokenize(caption, vocab, max_len);

        if (rec.contains("tags")) {
            if (!rec.at("tags").is_array()) {
                complain(lineno, "field 'tags' is not an array");
                continue;
            }
            bool tags_ok = true;
            for (const auto& t : rec.at("tags")) {
                if (!t.is_string()) {
                    complain(lineno, "tag phrase is not a string");
                    tags_ok = false;
                    break;
                }
                TokenSeq phrase = tokenize(t.get<std::string>(), vocab, max_len);
                if (!phrase.empty()) s.tags.push_back(std::move(phrase));
            }
            if (!tags_ok) continue;
        }

        const std::filesystem::path img_path = base / rec.at("image").get<std::string>();
        try {
            s.image = load_ppm(img_path);
        } catch (const Error& e) {
            complain(lineno, e.what());
            continue;
        }
        samples.push_back(std::move(s));
    }

    if (!problems.empty()) {
        std::string msg = "corpus: " + std::to_string(problems.size()) +
                          " malformed record(s) in " + jsonl_path.string();
        for (const auto& p : problems) msg += "\n  " + p;
        throw DataError(msg);
    }
    return samples;
}

Dataset load_corpus_dir(const std::filesystem::path& dir, std::size_t max_len) {
    Dataset ds;
    ds.vocab = Vocab::load(dir / "vocab.txt");
    ds.samples = load_corpus(dir / "corpus.jsonl", ds.vocab, max_len);
    ds.gt = load_gt(dir / "gt.json");
    if (ds.gt.relevant.size() != ds.samples.size())
        throw DataError("corpus: gt covers " + std::to_string(ds.gt.relevant.size()) +
                        " items but corpus has " + std::to_string(ds.samples.size()));
    return ds;
}

}  // namespace mvcl
