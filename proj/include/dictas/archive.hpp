#pragma once

#include "dictas/tensor.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <string>

namespace dictas {

/// Named tensors plus a JSON manifest, stored as a single file:
///
///   bytes 0..7   magic "DICTAS01"
///   bytes 8..15  manifest length n, little-endian u64
///   next n bytes UTF-8 JSON {"meta": {...}, "tensors": [{"name", "shape", "offset"}...]}
///   remainder    little-endian IEEE-754 float32 blobs; offsets are relative to
///                the start of this region, in bytes
///
/// Tensors are 2-D; vectors are stored as 1 x n.
struct TensorArchive {
    nlohmann::json meta = nlohmann::json::object();
    std::map<std::string, Matrix> tensors;

    void save(const std::filesystem::path& path) const;
    static TensorArchive load(const std::filesystem::path& path);

    const Matrix& at(const std::string& name) const;
    bool contains(const std::string& name) const { return tensors.count(name) != 0; }
};

/// Rounds every entry to the nearest float32, the precision archives store.
void round_to_float32(Matrix& m);

} // namespace dictas
