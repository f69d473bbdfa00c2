#include "dictas/dictionary.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace dictas;
using dictas::testing::random_matrix;
using dictas::testing::random_stack;
using dictas::testing::same_bits;

namespace {

LinearParams identity_linear(std::size_t c) {
    LinearParams p{Matrix(c, c, 0.0), Matrix(1, c, 0.0)};
    for (std::size_t i = 0; i < c; ++i) p.weight(i, i) = 1.0;
    return p;
}

AttnBlockParams identity_block(std::size_t c) {
    AttnBlockParams b;
    b.proj_q = b.proj_k = b.proj_v = identity_linear(c);
    b.num_heads = 1;
    b.mlp_hidden = b.mlp_out = identity_linear(c);
    return b;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

AttnBlockParams random_block(std::size_t c, std::uint64_t seed, bool zero_output) {
    Rng rng(seed);
    GeneratorInit init;
    init.num_heads = 2;
    return init_attn_block(c, init, rng, zero_output);
}

} // namespace

TEST_SUITE("dictionary") {

TEST_CASE("two-token block with identity projections") {
    const Matrix x{{1.0, 0.0}, {0.0, 1.0}};
    const Matrix out = attn_block_forward(x, identity_block(2));
    // logits x_i . x_j / sqrt(2): the own token gets 1/sqrt(2), the other 0
    const double p = std::exp(1.0 / std::sqrt(2.0)) / (std::exp(1.0 / std::sqrt(2.0)) + 1.0);
    CHECK(out(0, 0) == doctest::Approx(gelu(p)).epsilon(1e-14));
    CHECK(out(0, 1) == doctest::Approx(gelu(1.0 - p)).epsilon(1e-14));
    CHECK(out(1, 0) == doctest::Approx(gelu(1.0 - p)).epsilon(1e-14));
    CHECK(out(1, 1) == doctest::Approx(gelu(p)).epsilon(1e-14));
    const Matrix v = generate_value(x, identity_block(2));
    CHECK(v(0, 0) == doctest::Approx(1.0 + gelu(p)).epsilon(1e-14));
    CHECK(v(1, 0) == doctest::Approx(gelu(1.0 - p)).epsilon(1e-14));
}

TEST_CASE("a single token attends only to itself") {
    Rng rng(1);
    const AttnBlockParams b = random_block(4, 3, false);
    const Matrix x = random_matrix(1, 4, rng);
    // MLP(proj_v(x)) by hand
    Matrix v(1, 4), h(1, b.mlp_hidden.out_dim()), o(1, 4);
    for (std::size_t j = 0; j < 4; ++j) {
        v(0, j) = b.proj_v.bias(0, j);
        for (std::size_t i = 0; i < 4; ++i) v(0, j) += b.proj_v.weight(j, i) * x(0, i);
    }
    for (std::size_t j = 0; j < h.cols(); ++j) {
        double s = b.mlp_hidden.bias(0, j);
        for (std::size_t i = 0; i < 4; ++i) s += b.mlp_hidden.weight(j, i) * v(0, i);
        h(0, j) = gelu(s);
    }
    for (std::size_t j = 0; j < 4; ++j) {
        o(0, j) = b.mlp_out.bias(0, j);
        for (std::size_t i = 0; i < h.cols(); ++i) o(0, j) += b.mlp_out.weight(j, i) * h(0, i);
    }
    const Matrix out = attn_block_forward(x, b);
    for (std::size_t j = 0; j < 4; ++j) CHECK(out(0, j) == doctest::Approx(o(0, j)).epsilon(1e-12));
}

TEST_CASE("duplicate rows stay duplicates and the block is deterministic") {
    Rng rng(2);
    const AttnBlockParams b = random_block(4, 5, false);
    Matrix x = random_matrix(3, 4, rng);
    for (std::size_t j = 0; j < 4; ++j) x(2, j) = x(0, j);
    const Matrix out = attn_block_forward(x, b);
    for (std::size_t j = 0; j < 4; ++j) CHECK(out(0, j) == out(2, j));
    CHECK(same_bits(out, attn_block_forward(x, b)));
}

TEST_CASE("zeroed output layer gives a zero block and an identity value generator") {
    Rng rng(3);
    const AttnBlockParams b = random_block(4, 7, true);
    const Matrix x = random_matrix(5, 4, rng);
    CHECK(attn_block_forward(x, b) == Matrix(5, 4, 0.0));
    CHECK(generate_value(x, b) == x);
    CHECK(generate_query(x, b) == Matrix(5, 4, 0.0));
}

TEST_CASE("value generator is the input plus the block") {
    Rng rng(4);
    const AttnBlockParams b = random_block(4, 9, false);
    const Matrix x = random_matrix(6, 4, rng);
    const Matrix block = attn_block_forward(x, b), value = generate_value(x, b);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(value.data()[i] - block.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-15));
    CHECK(generate_value(Matrix(3, 4, 0.0), random_block(4, 1, false)) == Matrix(3, 4, 0.0));
}

TEST_CASE("tape forward equals the streamed forward") {
    Rng rng(5);
    const AttnBlockParams b = random_block(8, 11, false);
    const Matrix x = random_matrix(7, 8, rng);
    Tape t(false);
    const Matrix y = t.value(attn_block_forward(t, t.constant(x), b));
    const Matrix ref = attn_block_forward(x, b);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-12));
}

TEST_CASE("dictionary shapes, residual identity and duplicated references") {
    Rng rng(6);
    GeneratorInit init;
    init.num_heads = 2;
    const GeneratorSet gens = GeneratorSet::init(2, 4, init, 3);
    PatchFeatureStack one = random_stack(2, 1, 3, 3, 4, rng);
    const Dictionary d1 = build_dictionary(one, gens);
    REQUIRE(d1.layer_count() == 2);
    CHECK(d1.value[0] == one.layers[0]);
    CHECK(d1.key[1].rows() == 9);

    const std::vector<PatchFeatureStack> parts = {one, one};
    const Dictionary d2 = build_dictionary(PatchFeatureStack::concat(parts), gens);
    CHECK(d2.key[0].rows() == 18);
    // Attention runs over all 2HW tokens, so duplicated halves see the same context.
    for (std::size_t i = 0; i < 9; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            CHECK(d2.key[0](i, j) == d2.key[0](i + 9, j));
            CHECK(d2.value[1](i, j) == d2.value[1](i + 9, j));
        }
}

TEST_CASE("errors") {
    AttnBlockParams b = identity_block(3);
    b.num_heads = 2;
    CHECK_THROWS_AS(b.validate(), Error);
    CHECK_THROWS_AS(attn_block_forward(Matrix(0, 2), identity_block(2)), Error);
    CHECK_THROWS_AS(attn_block_forward(Matrix(2, 3), identity_block(2)), Error);
    Rng rng(7);
    GeneratorInit init;
    init.num_heads = 2;
    const GeneratorSet gens = GeneratorSet::init(2, 4, init, 3);
    CHECK_THROWS_AS(build_dictionary(random_stack(3, 1, 2, 2, 4, rng), gens), Error);
}

TEST_CASE("parameter names") {
    GeneratorInit init;
    init.num_heads = 2;
    const GeneratorSet gens = GeneratorSet::init(2, 4, init, 3);
    std::vector<std::string> names;
    gens.visit([&](const std::string& n, const Matrix&) { names.push_back(n); });
    CHECK(names.size() == 2 * 3 * 10);
    CHECK(std::find(names.begin(), names.end(), "gen.1.k.proj_q.weight") != names.end());
    CHECK(std::find(names.begin(), names.end(), "gen.0.v.mlp_out.bias") != names.end());
}

}
