#include "dictas/archive.hpp"
#include "dictas/vit.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>

using namespace dictas;
namespace fs = std::filesystem;

namespace {

// Random 3-block ViT written by `export_clip.py tiny-fixture`, with per-layer
// features computed by PyTorch in float64.
const fs::path kFixture = fs::path(DICTAS_TEST_DATA_DIR) / "tiny_vit.dictas";

cv::Mat fixture_image(const TensorArchive& a) {
    const Matrix& m = a.at("input.image");
    const int side = static_cast<int>(m.rows());
    cv::Mat img(side, side, CV_32FC3);
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x)
            for (int c = 0; c < 3; ++c)
                img.at<cv::Vec3f>(y, x)[c] = static_cast<float>(m(static_cast<std::size_t>(y), static_cast<std::size_t>(3 * x + c)));
    return img;
}

double worst_error(const Matrix& got, const Matrix& want) {
    REQUIRE(got.same_shape(want));
    double worst = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i)
        worst = std::max(worst, std::abs(got.data()[i] - want.data()[i]) / (1.0 + std::abs(want.data()[i])));
    return worst;
}

} // namespace

TEST_SUITE("vit") {

TEST_CASE("forward pass matches the PyTorch reference") {
    const TensorArchive a = TensorArchive::load(kFixture);
    const ClipVitBackbone vit(kFixture);
    CHECK(vit.spec().selected_layers == std::vector<int>{1, 3});
    CHECK(vit.spec().grid_height == 3);
    CHECK(vit.spec().channels == 8);
    const auto feats = vit.forward(fixture_image(a));
    REQUIRE(feats.size() == 2);
    // Expected values are stored as float32.
    CHECK(worst_error(feats[0], a.at("expected.layer1")) <= 1e-6);
    CHECK(worst_error(feats[1], a.at("expected.layer3")) <= 1e-6);
}

TEST_CASE("layer selection and the backbone interface") {
    const TensorArchive a = TensorArchive::load(kFixture);
    const ClipVitBackbone vit(kFixture, {3});
    const cv::Mat img = fixture_image(a);
    const std::vector<cv::Mat> batch = {img, img};
    const PatchFeatureStack s = extract_patch_features(vit, batch);
    CHECK(s.image_count == 2);
    REQUIRE(s.layer_count() == 1);
    CHECK(s.layers[0].rows() == 18);
    CHECK(worst_error(slice_rows(s.layers[0], 9, 18), a.at("expected.layer3")) <= 1e-6);
    CHECK_THROWS_AS(ClipVitBackbone(kFixture, {4}), Error);
    CHECK_THROWS_AS(vit.forward(cv::Mat(10, 10, CV_32FC3, cv::Scalar::all(0))), Error);
}

TEST_CASE("precomputed text embeddings") {
    const TensorArchive a = TensorArchive::load(kFixture);
    const ClipVitBackbone vit(kFixture);
    const auto& text = vit.text_encoder();
    CHECK(text.dim() == 8);
    const auto e = text.encode("a photo of a broken thing.");
    const auto row = a.at("text_embeddings").row(1);
    CHECK(std::equal(e.begin(), e.end(), row.begin()));
    CHECK_THROWS_AS(text.encode("a photo of a bottle."), Error);
}

TEST_CASE("archives with missing or misshapen tensors are rejected") {
    TensorArchive a = TensorArchive::load(kFixture);
    TensorArchive missing = a;
    missing.tensors.erase("ln_post.bias");
    CHECK_THROWS_AS(ClipVitBackbone(missing).forward(fixture_image(a)), Error);
    TensorArchive bad = a;
    bad.tensors["proj"] = Matrix(3, 3);
    CHECK_THROWS_AS([&] { ClipVitBackbone v{bad}; }(), Error);
    TensorArchive no_meta = a;
    no_meta.meta.erase("heads");
    CHECK_THROWS_AS([&] { ClipVitBackbone v{no_meta}; }(), Error);
}

}
