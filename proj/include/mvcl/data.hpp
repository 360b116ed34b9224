#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mvcl/rng.hpp"
#include "mvcl/types.hpp"

namespace mvcl {

/// Token table; id = position. Ids 0 and 1 are reserved for padding and
/// unknown tokens.
class Vocab {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;

    Vocab() = default;
    explicit Vocab(std::vector<std::string> words);

    /// The fixed vocabulary of the synthetic glyph world.
    static Vocab builtin();

    static Vocab load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    std::size_t size() const { return words_.size(); }
    /// Lookup with unknown-token fallback.
    int id(const std::string& word) const;
    const std::string& word(int id) const;
    const std::vector<std::string>& words() const { return words_; }

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> index_;
};

/// Lowercase, whitespace-split, map through the vocab (unknowns -> kUnk),
/// truncate to max_len.
TokenSeq tokenize(const std::string& text, const Vocab& vocab,
                  std::size_t max_len);
/// Inverse of tokenize for in-vocab sequences (space-joined words).
std::string detokenize(const TokenSeq& toks, const Vocab& vocab);

/// One latent scene element shared by image and text.
struct LatentFactor {
    int object_id = 0;        // shape
    int attribute_id = 0;     // color
    int position = 0;         // quadrant 0..3 (TL, TR, BL, BR)
    double distractor_noise = 0.0;
};

struct SynthConfig {
    std::size_t n_samples = 2000;
    std::size_t image_size = 16;  // square images
    int v_obj = 4;                // shapes
    int v_attr = 6;               // colors
    double caption_noise_rate = 0.15;  // per-token corruption probability
    double caption_keep_rate = 0.7;    // probability a factor is named
    double tag_coverage = 1.0;         // probability a factor is tagged
    std::uint64_t seed = 13;
};

void validate(const SynthConfig& cfg);

/// Relevance lists: gt.relevant[q] = gallery indices relevant to query q,
/// sorted ascending. For paired datasets the lists include the query's own
/// index (intra-modal evaluation removes it).
struct GroundTruth {
    std::vector<std::vector<int>> relevant;
};

/// A loaded or generated dataset: samples, the vocabulary they are encoded
/// against, and the relevance structure among them.
struct Dataset {
    std::vector<Sample> samples;
    Vocab vocab;
    GroundTruth gt;
};

/// Draw glyph scenes: each sample has 1-3 latent factors rendered into a
/// quantized RGB raster (shape = object, color = attribute, quadrant =
/// position) plus pixel noise; the caption names a random subset of the
/// factors with token corruption; the tags name each factor independently
/// with probability tag_coverage. Samples with equal factor multisets are
/// mutually relevant.
Dataset synth_generate(const SynthConfig& cfg);

/// Paint one factor's glyph into the raster (exposed for render tests).
void render_factor(Raster& img, const LatentFactor& f);

/// Deterministic train/eval split: returns (train indices, eval indices).
std::pair<std::vector<std::size_t>, std::vector<std::size_t>>
split_indices(std::size_t n, double eval_fraction, std::uint64_t seed);

/// Restrict a dataset to the given sample indices; relevance lists are
/// filtered to kept samples and remapped to the new positions. A paired
/// dataset keeps every kept sample relevant to itself.
Dataset subset_dataset(const Dataset& ds, const std::vector<std::size_t>& keep);

// ---- corpus files ----------------------------------------------------------
//
// A dataset directory holds: corpus.jsonl (one record per line with fields
// id, image, caption, tags, group), vocab.txt (token per line, id = line
// number), gt.json (relevance lists), and the rasters referenced by the
// records. See docs/formats.md.

void save_ppm(const Raster& img, const std::filesystem::path& path);
Raster load_ppm(const std::filesystem::path& path);

void save_gt(const GroundTruth& gt, const std::filesystem::path& path);
GroundTruth load_gt(const std::filesystem::path& path);

/// Write corpus.jsonl + vocab.txt + gt.json + images/ under dir.
void save_corpus(const Dataset& ds, const std::filesystem::path& dir);

/// Parse one records file against a vocabulary. Image paths are resolved
/// relative to the records file. Malformed records are collected and
/// reported together in a single error, each tagged with its line number.
std::vector<Sample> load_corpus(const std::filesystem::path& jsonl_path,
                                const Vocab& vocab, std::size_t max_len);

/// Load a full dataset directory written by save_corpus.
Dataset load_corpus_dir(const std::filesystem::path& dir, std::size_t max_len);

}  // namespace mvcl
