#include "mvcl/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace mvcl {

const char* direction_name(Direction d) {
    switch (d) {
        case Direction::I2T: return "I2T";
        case Direction::T2I: return "T2I";
        case Direction::I2I: return "I2I";
        case Direction::T2T: return "T2T";
    }
    throw ParamError("unknown direction");
}

double recall_at_k(const Tensor& sim, const GroundTruth& gt, std::size_t k) {
    if (sim.rank() != 2) throw ShapeError("recall_at_k: sim must be [Q, G]");
    const std::size_t q = sim.dim(0), g = sim.dim(1);
    if (q == 0 || g == 0) throw ShapeError("recall_at_k: empty similarity matrix");
    if (k == 0) throw ParamError("recall_at_k: k must be at least 1");
    if (gt.relevant.size() != q)
        throw DataError("recall_at_k: " + std::to_string(gt.relevant.size()) +
                        " relevance lists for " + std::to_string(q) + " queries");
    if (k > g) {
        std::cerr << "recall_at_k: k=" << k << " clamped to gallery size " << g
                  << "\n";
        k = g;
    }

    std::vector<std::size_t> order(g);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < q; ++i) {
        const auto& rel = gt.relevant[i];
        if (rel.empty())
            throw DataError("recall_at_k: empty relevant set for query " +
                            std::to_string(i));
        for (int r : rel)
            if (r < 0 || static_cast<std::size_t>(r) >= g)
                throw DataError("recall_at_k: relevant index " + std::to_string(r) +
                                " outside gallery of " + std::to_string(g));
        const double* row = sim.data() + i * g;
        std::iota(order.begin(), order.end(), std::size_t{0});
        // stable partial sort by descending score; equal scores keep their
        // ascending-index order
        std::stable_sort(order.begin(), order.end(),
                         [row](std::size_t a, std::size_t b) {
                             return row[a] > row[b];
                         });
        bool hit = false;
        for (std::size_t j = 0; j < k && !hit; ++j)
            hit = std::binary_search(rel.begin(), rel.end(),
                                     static_cast<int>(order[j]));
        if (hit) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(q);
}

double mean_recall(double r1, double r5, double r10) {
    for (double r : {r1, r5, r10})
        if (r < 0.0 || r > 1.0)
            throw ParamError("mean_recall: recall values must be in [0, 1]");
    return (r1 + r5 + r10) / 3.0;
}

// ---- report rendering ------------------------------------------------------------

std::string RetrievalReport::to_json() const {
    nlohmann::ordered_json j;
    for (Direction d : kDirections) {
        const DirectionReport& r = at(d);
        nlohmann::ordered_json dir;
        dir["r1"] = r.r1;
        dir["r5"] = r.r5;
        dir["r10"] = r.r10;
        dir["mean_recall"] = r.mean_recall;
        dir["queries"] = r.queries;
        j[direction_name(d)] = dir;
    }
    j["overall"] = overall;
    return j.dump(2) + "\n";
}

std::string RetrievalReport::to_table() const {
    std::ostringstream out;
    char line[128];
    std::snprintf(line, sizeof(line), "%-6s %8s %8s %8s %8s %8s\n", "dir", "R@1",
                  "R@5", "R@10", "mR", "queries");
    out << line;
    for (Direction d : kDirections) {
        const DirectionReport& r = at(d);
        std::snprintf(line, sizeof(line), "%-6s %8.2f %8.2f %8.2f %8.2f %8zu\n",
                      direction_name(d), 100.0 * r.r1, 100.0 * r.r5, 100.0 * r.r10,
                      100.0 * r.mean_recall, r.queries);
        out << line;
    }
    std::snprintf(line, sizeof(line), "overall mR %.2f\n", 100.0 * overall);
    out << line;
    return out.str();
}

// ---- zero-shot retrieval ----------------------------------------------------------

namespace {

/// Inference-mode embeddings of every sample: identity image views and
/// dropout-free caption passes, in chunks so the batched kernels apply.
std::pair<Tensor, Tensor> encode_corpus(const Model& model, const Dataset& ds) {
    NoGradGuard guard;
    const std::size_t n = ds.samples.size();
    const std::size_t d = model.config().image.embed_dim;
    const std::size_t chunk = 64;
    Tensor img = Tensor::uninitialized({n, d});
    Tensor txt = Tensor::uninitialized({n, d});
    Rng unused(0);  // eval mode draws nothing
    for (std::size_t at = 0; at < n; at += chunk) {
        const std::size_t take = std::min(chunk, n - at);
        std::vector<const Raster*> imgs(take);
        std::vector<const TokenSeq*> toks(take);
        for (std::size_t i = 0; i < take; ++i) {
            imgs[i] = &ds.samples[at + i].image;
            toks[i] = &ds.samples[at + i].caption;
        }
        Tensor hi = model.image_encoder().forward(imgs);
        Tensor ht = model.text_encoder().forward(toks, false, unused);
        std::copy(hi.data(), hi.data() + take * d, img.data() + at * d);
        std::copy(ht.data(), ht.data() + take * d, txt.data() + at * d);
    }
    return {img, txt};
}

DirectionReport score_direction(const Tensor& sim, const GroundTruth& gt) {
    DirectionReport rep;
    rep.queries = sim.dim(0);
    rep.r1 = recall_at_k(sim, gt, 1);
    rep.r5 = recall_at_k(sim, gt, 5);
    rep.r10 = recall_at_k(sim, gt, 10);
    rep.mean_recall = mean_recall(rep.r1, rep.r5, rep.r10);
    return rep;
}

/// Leave-self-out: drop the query's own index from each relevant set; rows
/// whose set becomes empty are removed from both sim and gt.
std::pair<Tensor, GroundTruth> leave_self_out(const Tensor& sim,
                                              const GroundTruth& gt) {
    const std::size_t q = sim.dim(0), g = sim.dim(1);
    GroundTruth kept_gt;
    std::vector<std::size_t> kept_rows;
    for (std::size_t i = 0; i < q; ++i) {
        std::vector<int> rel;
        for (int r : gt.relevant[i])
            if (static_cast<std::size_t>(r) != i) rel.push_back(r);
        if (rel.empty()) continue;
        kept_rows.push_back(i);
        kept_gt.relevant.push_back(std::move(rel));
    }
    if (kept_rows.empty()) return {Tensor(), std::move(kept_gt)};
    Tensor out = Tensor::uninitialized({kept_rows.size(), g});
    for (std::size_t i = 0; i < kept_rows.size(); ++i) {
        const double* src = sim.data() + kept_rows[i] * g;
        double* dst = out.data() + i * g;
        std::copy(src, src + g, dst);
        // the query column can never win: it is not in the relevant set and
        // self-similarity is maximal, so mask it out of its own row
        dst[kept_rows[i]] = -2.0;  // below any cosine
    }
    return {out, std::move(kept_gt)};
}

}  // namespace

RetrievalReport zero_shot_retrieval(const Model& model, const Dataset& ds) {
    if (ds.samples.empty()) throw DataError("zero_shot_retrieval: empty dataset");
    if (ds.gt.relevant.size() != ds.samples.size())
        throw DataError("zero_shot_retrieval: ground truth covers " +
                        std::to_string(ds.gt.relevant.size()) + " of " +
                        std::to_string(ds.samples.size()) + " samples");
    auto [img, txt] = encode_corpus(model, ds);
    NoGradGuard guard;

    RetrievalReport rep;
    rep.at(Direction::I2T) = score_direction(matmul_nt(img, txt), ds.gt);
    rep.at(Direction::T2I) = score_direction(matmul_nt(txt, img), ds.gt);

    auto [sim_ii, gt_ii] = leave_self_out(matmul_nt(img, img), ds.gt);
    auto [sim_tt, gt_tt] = leave_self_out(matmul_nt(txt, txt), ds.gt);
    if (sim_ii.defined()) rep.at(Direction::I2I) = score_direction(sim_ii, gt_ii);
    if (sim_tt.defined()) rep.at(Direction::T2T) = score_direction(sim_tt, gt_tt);

    rep.overall = 0.5 * (rep.at(Direction::I2T).mean_recall +
                         rep.at(Direction::T2I).mean_recall);
    return rep;
}

}  // namespace mvcl
