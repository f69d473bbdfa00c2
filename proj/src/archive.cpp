#include "dictas/archive.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace dictas {

namespace {

constexpr std::array<char, 8> kMagic = {'D', 'I', 'C', 'T', 'A', 'S', '0', '1'};

static_assert(std::endian::native == std::endian::little,
              "archive I/O assumes a little-endian host");

void write_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}

} // namespace

void round_to_float32(Matrix& m) {
    for (double& v : m.data()) v = static_cast<double>(static_cast<float>(v));
}

const Matrix& TensorArchive::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw Error("archive has no tensor '" + name + "'");
    return it->second;
}

void TensorArchive::save(const std::filesystem::path& path) const {
    nlohmann::json manifest;
    manifest["meta"] = meta;
    manifest["tensors"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, m] : tensors) {
        manifest["tensors"].push_back({{"name", name},
                                       {"shape", {m.rows(), m.cols()}},
                                       {"offset", offset}});
        offset += m.size() * sizeof(float);
    }
    const std::string text = manifest.dump(2);

    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open archive for writing: " + path.string());
    os.write(kMagic.data(), kMagic.size());
    write_u64(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    std::vector<float> buf;
    for (const auto& [name, m] : tensors) {
        buf.assign(m.data().begin(), m.data().end());
        os.write(reinterpret_cast<const char*>(buf.data()),
                 static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!os) throw Error("failed writing archive: " + path.string());
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open archive: " + path.string());
    std::array<char, 8> magic{};
    is.read(magic.data(), magic.size());
    if (!is || magic != kMagic) throw Error("not a tensor archive: " + path.string());
    const std::uint64_t len = read_u64(is);
    std::string text(len, '\0');
    is.read(text.data(), static_cast<std::streamsize>(len));
    if (!is) throw Error("truncated archive manifest: " + path.string());
    const auto manifest = nlohmann::json::parse(text);
    const auto blob_start = is.tellg();

    TensorArchive out;
    out.meta = manifest.value("meta", nlohmann::json::object());
    std::vector<float> buf;
    for (const auto& entry : manifest.at("tensors")) {
        const auto name = entry.at("name").get<std::string>();
        const auto rows = entry.at("shape").at(0).get<std::size_t>();
        const auto cols = entry.at("shape").at(1).get<std::size_t>();
        const auto offset = entry.at("offset").get<std::uint64_t>();
        buf.resize(rows * cols);
        is.seekg(blob_start + static_cast<std::streamoff>(offset));
        is.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (!is) throw Error("truncated tensor '" + name + "' in " + path.string());
        out.tensors.emplace(name, Matrix(rows, cols, std::vector<double>(buf.begin(), buf.end())));
    }
    return out;
}

} // namespace dictas
