#pragma once

#include "dictas/backbone.hpp"
#include "dictas/dictionary.hpp"
#include "dictas/lookup.hpp"
#include "dictas/scoring.hpp"
#include "dictas/training.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace dictas {

struct InferenceOptions {
    LookupOptions lookup;
    ScoringOptions scoring;
};

/// Dictionary built once from k normal references and reused for every query.
/// Holds references to the backbone and checkpoint, which must outlive it.
class InferenceSession {
public:
    /// Throws on a fingerprint mismatch or when no reference is given.
    InferenceSession(const Backbone& backbone, const Checkpoint& ckpt, std::span<const cv::Mat> references,
                     InferenceOptions options);

    /// Map at the query's own resolution plus its maximum.
    AnomalyMap run(const cv::Mat& query) const;

    const Dictionary& dictionary() const { return dict_; }
    std::size_t shots() const { return shots_; }

private:
    const Backbone& backbone_;
    const Checkpoint& ckpt_;
    InferenceOptions options_;
    Dictionary dict_;
    std::size_t shots_ = 0;
};

std::vector<AnomalyMap> infer(const Backbone& backbone, const Checkpoint& ckpt, std::span<const cv::Mat> references,
                              std::span<const cv::Mat> queries, const InferenceOptions& options);

/// Query images directly inside `dir` (relative name "<stem>") or one level
/// below it ("<subdir>/<stem>"), sorted.
std::vector<std::pair<std::string, std::filesystem::path>> list_queries(const std::filesystem::path& dir);

/// Runs every query of `query_dir` and writes "<out>/<relative>.png" (16-bit map)
/// and "<out>/scores.tsv" (relative name, tab, image score).
void infer_directory(const Backbone& backbone, const Checkpoint& ckpt,
                     const std::vector<std::filesystem::path>& references, const std::filesystem::path& query_dir,
                     const std::filesystem::path& out_dir, const InferenceOptions& options);

} // namespace dictas
