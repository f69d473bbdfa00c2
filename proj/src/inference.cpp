#include "dictas/inference.hpp"

#include "dictas/image.hpp"

#include <fstream>
#include <iomanip>

namespace fs = std::filesystem;

namespace dictas {

InferenceSession::InferenceSession(const Backbone& backbone, const Checkpoint& ckpt,
                                   std::span<const cv::Mat> references, InferenceOptions options)
    : backbone_(backbone), ckpt_(ckpt), options_(options), shots_(references.size()) {
    if (references.empty()) throw Error("inference needs at least one reference image (k >= 1)");
    ckpt.check_backbone(backbone.spec());
    const auto refs = pool_patch_features(extract_patch_features(backbone, references), ckpt.pool_kernel);
    dict_ = build_dictionary(refs, ckpt.model.generators);
}

AnomalyMap InferenceSession::run(const cv::Mat& query) const {
    const cv::Mat q[] = {query};
    const auto feats = pool_patch_features(extract_patch_features(backbone_, q), ckpt_.pool_kernel);
    const auto retrieved = retrieve(feats, ckpt_.model.generators, dict_, options_.lookup);
    AnomalyMap out;
    out.map = anomaly_map(feats, retrieved, static_cast<std::size_t>(query.rows),
                          static_cast<std::size_t>(query.cols), options_.scoring);
    out.image_score = image_score(out.map);
    return out;
}

std::vector<AnomalyMap> infer(const Backbone& backbone, const Checkpoint& ckpt, std::span<const cv::Mat> references,
                              std::span<const cv::Mat> queries, const InferenceOptions& options) {
    const InferenceSession session(backbone, ckpt, references, options);
    std::vector<AnomalyMap> out;
    out.reserve(queries.size());
    for (const auto& q : queries) out.push_back(session.run(q));
    return out;
}

std::vector<std::pair<std::string, fs::path>> list_queries(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw Error("query directory not found: " + dir.string());
    std::vector<std::pair<std::string, fs::path>> out;
    for (const auto& p : list_images(dir)) out.emplace_back(p.stem().string(), p);
    std::vector<fs::path> subdirs;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) subdirs.push_back(e.path());
    std::sort(subdirs.begin(), subdirs.end());
    for (const auto& sub : subdirs)
        for (const auto& p : list_images(sub)) out.emplace_back(sub.filename().string() + "/" + p.stem().string(), p);
    if (out.empty()) throw Error("no query images in " + dir.string());
    return out;
}

void infer_directory(const Backbone& backbone, const Checkpoint& ckpt, const std::vector<fs::path>& references,
                     const fs::path& query_dir, const fs::path& out_dir, const InferenceOptions& options) {
    std::vector<cv::Mat> refs;
    for (const auto& r : references) refs.push_back(load_rgb(r));
    const InferenceSession session(backbone, ckpt, refs, options);
    const auto queries = list_queries(query_dir);
    fs::create_directories(out_dir);
    std::ofstream scores(out_dir / "scores.tsv");
    if (!scores) throw Error("cannot write " + (out_dir / "scores.tsv").string());
    scores << std::setprecision(17);
    for (const auto& [rel, path] : queries) {
        const AnomalyMap m = session.run(load_rgb(path));
        const fs::path target = out_dir / (rel + ".png");
        fs::create_directories(target.parent_path());
        save_map_png16(target, m.map);
        scores << rel << '\t' << m.image_score << '\n';
    }
}

} // namespace dictas
