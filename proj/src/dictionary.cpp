#include "dictas/dictionary.hpp"

#include "dictas/kernels.hpp"

#include <cmath>
#include <numbers>

namespace dictas {

namespace kp = kernels::parallel;

namespace {

LinearParams init_linear(std::size_t in, std::size_t out, double scale, Rng& rng) {
    LinearParams p{Matrix(out, in), Matrix(1, out)};
    const double sd = scale / std::sqrt(static_cast<double>(in));
    for (double& v : p.weight.data()) v = sd * standard_normal(rng);
    return p;
}

void check_linear(const LinearParams& p, std::size_t in, std::size_t out, const char* what) {
    if (p.weight.rows() != out || p.weight.cols() != in || p.bias.rows() != 1 ||
        p.bias.cols() != out)
        throw Error(std::string("attention block parameter '") + what + "' has shape " +
                    shape_string(p.weight) + ", expected (" + std::to_string(out) + " x " +
                    std::to_string(in) + ")");
    if (!p.weight.all_finite() || !p.bias.all_finite())
        throw Error(std::string("attention block parameter '") + what + "' is not finite");
}

Matrix apply_linear(const Matrix& x, const LinearParams& p) {
    Matrix out = kp::matmul_nt(x, p.weight);
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto r = out.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) r[j] += p.bias(0, j);
    }
    return out;
}

void apply_gelu(Matrix& m) {
    for (double& v : m.data()) v = 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2));
}

void visit_linear(const std::string& prefix, LinearParams& p,
                  const std::function<void(const std::string&, Matrix&)>& fn) {
    fn(prefix + ".weight", p.weight);
    fn(prefix + ".bias", p.bias);
}

void visit_linear(const std::string& prefix, const LinearParams& p,
                  const std::function<void(const std::string&, const Matrix&)>& fn) {
    fn(prefix + ".weight", p.weight);
    fn(prefix + ".bias", p.bias);
}

Var bind_linear(Tape& tape, Var x, const LinearParams& p) {
    return ag::linear(tape, x, tape.param(p.weight), tape.param(p.bias));
}

void check_input(const Matrix& input, const AttnBlockParams& params) {
    if (input.rows() == 0) throw Error("attention block needs at least one token");
    if (input.cols() != params.channels())
        throw Error("attention block input has " + std::to_string(input.cols()) +
                    " channels, parameters expect " + std::to_string(params.channels()));
}

} // namespace

void AttnBlockParams::validate() const {
    const std::size_t c = channels();
    if (c == 0) throw Error("attention block has zero channels");
    if (num_heads == 0 || c % num_heads != 0) throw Error("C not divisible by num_heads");
    check_linear(proj_q, c, c, "proj_q");
    check_linear(proj_k, c, c, "proj_k");
    check_linear(proj_v, c, c, "proj_v");
    check_linear(mlp_hidden, c, mlp_hidden.out_dim(), "mlp_hidden");
    check_linear(mlp_out, mlp_hidden.out_dim(), c, "mlp_out");
}

void AttnBlockParams::visit(const std::function<void(const std::string&, Matrix&)>& fn) {
    visit_linear("proj_q", proj_q, fn);
    visit_linear("proj_k", proj_k, fn);
    visit_linear("proj_v", proj_v, fn);
    visit_linear("mlp_hidden", mlp_hidden, fn);
    visit_linear("mlp_out", mlp_out, fn);
}

void AttnBlockParams::visit(const std::function<void(const std::string&, const Matrix&)>& fn) const {
    visit_linear("proj_q", proj_q, fn);
    visit_linear("proj_k", proj_k, fn);
    visit_linear("proj_v", proj_v, fn);
    visit_linear("mlp_hidden", mlp_hidden, fn);
    visit_linear("mlp_out", mlp_out, fn);
}

AttnBlockParams init_attn_block(std::size_t channels, const GeneratorInit& init, Rng& rng,
                                bool zero_output) {
    AttnBlockParams p;
    p.num_heads = init.num_heads;
    p.proj_q = init_linear(channels, channels, init.attention_scale, rng);
    p.proj_k = init_linear(channels, channels, init.attention_scale, rng);
    p.proj_v = init_linear(channels, channels, init.attention_scale, rng);
    const std::size_t hidden = init.hidden_multiplier * channels;
    p.mlp_hidden = init_linear(channels, hidden, init.mlp_scale, rng);
    p.mlp_out = init_linear(hidden, channels, init.mlp_scale, rng);
    if (zero_output) p.mlp_out.weight.fill(0.0);
    p.validate();
    return p;
}

GeneratorSet GeneratorSet::init(std::size_t layer_count, std::size_t channels,
                                const GeneratorInit& init, std::uint64_t seed) {
    GeneratorSet set;
    for (std::size_t l = 0; l < layer_count; ++l) {
        Rng rng = make_rng(seed, "generator-init", l);
        LayerGenerators g;
        g.query = init_attn_block(channels, init, rng, false);
        g.key = init_attn_block(channels, init, rng, false);
        g.value = init_attn_block(channels, init, rng, init.zero_value_output);
        set.layers.push_back(std::move(g));
    }
    return set;
}

void GeneratorSet::visit(const std::function<void(const std::string&, Matrix&)>& fn) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string base = "gen." + std::to_string(l) + ".";
        layers[l].query.visit([&](const std::string& n, Matrix& m) { fn(base + "q." + n, m); });
        layers[l].key.visit([&](const std::string& n, Matrix& m) { fn(base + "k." + n, m); });
        layers[l].value.visit([&](const std::string& n, Matrix& m) { fn(base + "v." + n, m); });
    }
}

void GeneratorSet::visit(const std::function<void(const std::string&, const Matrix&)>& fn) const {
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string base = "gen." + std::to_string(l) + ".";
        layers[l].query.visit([&](const std::string& n, const Matrix& m) { fn(base + "q." + n, m); });
        layers[l].key.visit([&](const std::string& n, const Matrix& m) { fn(base + "k." + n, m); });
        layers[l].value.visit([&](const std::string& n, const Matrix& m) { fn(base + "v." + n, m); });
    }
}

Matrix attn_block_forward(const Matrix& input, const AttnBlockParams& params) {
    params.validate();
    check_input(input, params);
    const Matrix q = apply_linear(input, params.proj_q);
    const Matrix k = apply_linear(input, params.proj_k);
    const Matrix v = apply_linear(input, params.proj_v);
    const double scale = 1.0 / std::sqrt(static_cast<double>(params.channels()));
    Matrix mixed = kp::attention_rows(q, k, v, params.num_heads, scale);
    Matrix hidden = apply_linear(mixed, params.mlp_hidden);
    apply_gelu(hidden);
    return apply_linear(hidden, params.mlp_out);
}

Matrix generate_query(const Matrix& query_features, const AttnBlockParams& g_q) {
    return attn_block_forward(query_features, g_q);
}

Matrix generate_key(const Matrix& reference_features, const AttnBlockParams& g_k) {
    return attn_block_forward(reference_features, g_k);
}

Matrix generate_value(const Matrix& reference_features, const AttnBlockParams& g_v) {
    Matrix out = attn_block_forward(reference_features, g_v);
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += reference_features.data()[i];
    return out;
}

Dictionary build_dictionary(const PatchFeatureStack& references, const GeneratorSet& gens) {
    references.validate();
    if (references.layer_count() != gens.layer_count())
        throw Error("layer count mismatch: features have " + std::to_string(references.layer_count()) +
                    ", generators " + std::to_string(gens.layer_count()));
    Dictionary dict;
    for (std::size_t l = 0; l < references.layer_count(); ++l) {
        dict.key.push_back(generate_key(references.layers[l], gens.layers[l].key));
        dict.value.push_back(generate_value(references.layers[l], gens.layers[l].value));
    }
    return dict;
}

Var attn_block_forward(Tape& tape, Var input, const AttnBlockParams& params) {
    params.validate();
    check_input(tape.value(input), params);
    const Var q = bind_linear(tape, input, params.proj_q);
    const Var k = bind_linear(tape, input, params.proj_k);
    const Var v = bind_linear(tape, input, params.proj_v);
    const std::size_t c = params.channels();
    const std::size_t d = c / params.num_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(c));
    std::vector<Var> heads;
    for (std::size_t h = 0; h < params.num_heads; ++h) {
        const Var qh = ag::slice_cols(tape, q, h * d, (h + 1) * d);
        const Var kh = ag::slice_cols(tape, k, h * d, (h + 1) * d);
        const Var vh = ag::slice_cols(tape, v, h * d, (h + 1) * d);
        const Var logits = ag::scale(tape, ag::matmul_nt(tape, qh, kh), scale);
        heads.push_back(ag::matmul_nn(tape, ag::softmax_rows(tape, logits), vh));
    }
    const Var mixed = heads.size() == 1 ? heads.front() : ag::concat_cols(tape, heads);
    const Var hidden = ag::gelu(tape, bind_linear(tape, mixed, params.mlp_hidden));
    return bind_linear(tape, hidden, params.mlp_out);
}

Var generate_value(Tape& tape, Var reference_features, const AttnBlockParams& g_v) {
    return ag::add(tape, reference_features, attn_block_forward(tape, reference_features, g_v));
}

DictionaryVars build_dictionary(Tape& tape, const PatchFeatureStack& references,
                                const GeneratorSet& gens) {
    references.validate();
    if (references.layer_count() != gens.layer_count())
        throw Error("layer count mismatch between feature stack and generators");
    DictionaryVars dict;
    for (std::size_t l = 0; l < references.layer_count(); ++l) {
        const Var f = tape.constant(references.layers[l]);
        dict.key.push_back(attn_block_forward(tape, f, gens.layers[l].key));
        dict.value.push_back(generate_value(tape, f, gens.layers[l].value));
    }
    return dict;
}

} // namespace dictas
