#include "dictas/training.hpp"

#include "dictas/archive.hpp"
#include "dictas/image.hpp"
#include "dictas/rng.hpp"
#include "dictas/synthesis.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace dictas {

Model Model::init(const BackboneSpec& spec, const GeneratorInit& init, std::uint64_t seed) {
    spec.validate();
    Model m;
    m.generators = GeneratorSet::init(spec.layer_count(), spec.channels, init, derive_seed(seed, "generators"));
    m.tac = TacHeadParams::init(spec.layer_count() * spec.channels, spec.embed_dim, derive_seed(seed, "tac"));
    return m;
}

void Model::visit(const std::function<void(const std::string&, Matrix&)>& fn) {
    generators.visit(fn);
    tac.visit(fn);
}

void Model::visit(const std::function<void(const std::string&, const Matrix&)>& fn) const {
    generators.visit(fn);
    tac.visit(fn);
}

Var example_loss(Tape& tape, const Model& model, const TrainingExample& ex, const LossWeights& weights,
                 const LookupOptions& lookup, LossParts* parts) {
    if (ex.text == nullptr) throw Error("training example has no text embeddings");
    const auto& gens = model.generators;
    if (ex.query.image_count != 1) throw Error("training example must have one query image");
    const DictionaryVars dict = build_dictionary(tape, ex.references, gens);
    std::vector<Var> query;
    std::vector<Var> retrieved;
    for (std::size_t l = 0; l < gens.layer_count(); ++l) {
        const Var fq = tape.constant(ex.query.layers[l]);
        const Var q = attn_block_forward(tape, fq, gens.layers[l].query);
        query.push_back(fq);
        retrieved.push_back(retrieve_layer(tape, q, dict.key[l], dict.value[l], lookup));
    }
    const Var lq = ex.labels.normal.empty() ? tape.constant(Matrix(1, 1, 0.0))
                                            : query_loss(tape, query, retrieved, ex.labels);
    const Var lc = cqc_loss(tape, query, retrieved, ex.labels);
    const Var lt = tac_loss(tape, query, retrieved, *ex.text, ex.label, model.tac, weights.logit_scale);
    if (parts != nullptr) *parts = {tape.value(lq)(0, 0), tape.value(lc)(0, 0), tape.value(lt)(0, 0)};
    return total_loss(tape, lq, lc, lt, weights.lambda_cqc, weights.lambda_tac);
}

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (!(lr > 0.0)) throw Error("Adam: learning rate must be positive");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw Error("Adam: betas must lie in [0, 1)");
}

void Adam::step(Model& model, const std::map<std::string, Matrix>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    model.visit([&](const std::string& name, Matrix& p) {
        auto g = grads.find(name);
        if (g == grads.end()) return;
        require_same_shape(p, g->second, "Adam gradient");
        auto [mi, fresh_m] = m_.try_emplace(name, p.rows(), p.cols());
        auto [vi, fresh_v] = v_.try_emplace(name, p.rows(), p.cols());
        auto& m = mi->second.data();
        auto& v = vi->second.data();
        const auto& gd = g->second.data();
        auto& pd = p.data();
        for (std::size_t i = 0; i < pd.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * gd[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * gd[i] * gd[i];
            pd[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        }
    });
}

std::string feature_fingerprint(const BackboneSpec& spec, std::size_t pool_kernel) {
    return spec.fingerprint() + ";pool=" + std::to_string(pool_kernel);
}

Checkpoint Checkpoint::from_model(Model model, const BackboneSpec& spec, std::size_t pool_kernel) {
    Checkpoint c;
    c.model = std::move(model);
    c.model.visit([](const std::string&, Matrix& p) { round_to_float32(p); });
    c.fingerprint = feature_fingerprint(spec, pool_kernel);
    c.pool_kernel = pool_kernel;
    return c;
}

void Checkpoint::check_backbone(const BackboneSpec& spec) const {
    const std::string have = feature_fingerprint(spec, pool_kernel);
    if (have != fingerprint)
        throw Error("checkpoint fingerprint mismatch: trained on [" + fingerprint + "], backbone gives [" + have + "]");
}

namespace {

nlohmann::json trace_to_json(const std::vector<StepRecord>& trace) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : trace)
        j.push_back({r.step, r.epoch, r.total, r.parts.query, r.parts.cqc, r.parts.tac});
    return j;
}

std::vector<StepRecord> trace_from_json(const nlohmann::json& j) {
    std::vector<StepRecord> out;
    for (const auto& r : j)
        out.push_back({r.at(0).get<std::size_t>(), r.at(1).get<int>(), r.at(2).get<double>(),
                       {r.at(3).get<double>(), r.at(4).get<double>(), r.at(5).get<double>()}});
    return out;
}

} // namespace

void Checkpoint::save(const std::filesystem::path& path) const {
    TensorArchive ar;
    model.visit([&](const std::string& name, const Matrix& p) { ar.tensors[name] = p; });
    const auto& first = model.generators.layers.at(0).query;
    ar.meta = {
        {"format", "dictas-checkpoint"},
        {"fingerprint", fingerprint},
        {"pool_kernel", pool_kernel},
        {"layers", model.generators.layer_count()},
        {"channels", first.channels()},
        {"num_heads", first.num_heads},
        {"hidden", first.mlp_hidden.out_dim()},
        {"embed_dim", model.tac.linear.out_dim()},
        {"epoch", epoch},
        {"steps", steps},
        {"categories", categories},
        {"config", config},
        {"trace", trace_to_json(trace)},
    };
    ar.save(path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    const TensorArchive ar = TensorArchive::load(path);
    const auto& meta = ar.meta;
    if (meta.value("format", std::string()) != "dictas-checkpoint")
        throw Error("not a checkpoint archive: " + path.string());
    Checkpoint c;
    try {
        GeneratorInit init;
        init.num_heads = meta.at("num_heads").get<std::size_t>();
        const auto channels = meta.at("channels").get<std::size_t>();
        init.hidden_multiplier = meta.at("hidden").get<std::size_t>() / channels;
        const auto layers = meta.at("layers").get<std::size_t>();
        c.model.generators = GeneratorSet::init(layers, channels, init, 0);
        c.model.tac = TacHeadParams::init(layers * channels, meta.at("embed_dim").get<std::size_t>(), 0);
        c.fingerprint = meta.at("fingerprint").get<std::string>();
        c.pool_kernel = meta.at("pool_kernel").get<std::size_t>();
        c.epoch = meta.value("epoch", 0);
        c.steps = meta.value("steps", std::size_t{0});
        c.categories = meta.value("categories", std::vector<std::string>{});
        c.config = meta.value("config", nlohmann::json::object());
        if (meta.contains("trace")) c.trace = trace_from_json(meta.at("trace"));
    } catch (const nlohmann::json::exception& e) {
        throw Error("checkpoint " + path.string() + " has a malformed manifest: " + e.what());
    }
    std::size_t bound = 0;
    c.model.visit([&](const std::string& name, Matrix& p) {
        const Matrix& stored = ar.at(name);
        if (!stored.same_shape(p))
            throw Error("checkpoint tensor " + name + " has shape " + shape_string(stored) + ", expected " +
                        shape_string(p));
        p = stored;
        ++bound;
    });
    if (bound != ar.tensors.size()) throw Error("checkpoint has unexpected extra tensors");
    return c;
}

TrainingSet TrainingSet::from_images(std::vector<cv::Mat> images, std::vector<std::string> categories) {
    if (images.size() != categories.size()) throw Error("training set: one category per image required");
    TrainingSet set;
    set.size = images.size();
    set.category_of = std::move(categories);
    auto shared = std::make_shared<std::vector<cv::Mat>>(std::move(images));
    set.load = [shared](std::size_t i) { return shared->at(i).clone(); };
    return set;
}

TrainingSet TrainingSet::from_layout(const DatasetLayout& layout, const std::vector<std::string>& categories,
                                     int height, int width, const std::string& anomaly_source_dir) {
    auto paths = std::make_shared<std::vector<std::filesystem::path>>();
    TrainingSet set;
    const auto cats = categories.empty() ? layout.categories() : categories;
    for (const auto& c : cats)
        for (auto& p : layout.train_images(c)) {
            paths->push_back(std::move(p));
            set.category_of.push_back(c);
        }
    set.size = paths->size();
    set.load = [paths, height, width](std::size_t i) { return resize_bicubic(load_rgb(paths->at(i)), height, width); };
    if (!anomaly_source_dir.empty()) {
        auto sources = std::make_shared<std::vector<std::filesystem::path>>(list_images(anomaly_source_dir));
        if (sources->empty()) throw Error("anomaly source directory has no images: " + anomaly_source_dir);
        set.source_count = sources->size();
        set.load_source = [sources, height, width](std::size_t i) {
            return resize_bicubic(load_rgb(sources->at(i)), height, width);
        };
    }
    return set;
}

TrainingExample make_example(const Config& cfg, const TrainingSet& data, const Backbone& backbone,
                             std::size_t item, std::uint64_t sample_seed,
                             const std::map<std::string, TextEmbeddingPair>& text) {
    const auto& spec = backbone.spec();
    const cv::Mat image = resize_bicubic(data.load(item), spec.input_height, spec.input_width);
    Rng rng = make_rng(sample_seed, "anomaly-source");
    cv::Mat source;
    if (data.source_count > 0) {
        source = data.load_source(static_cast<std::size_t>(uniform_index(rng, data.source_count)));
    } else if (data.size > 1) {
        std::size_t j = static_cast<std::size_t>(uniform_index(rng, data.size - 1));
        if (j >= item) ++j;
        source = data.load(j);
    } else {
        source = image;
    }
    const SyntheticSample s = make_training_pair(image, source, cfg.synthesis, cfg.train.k_train, sample_seed);

    TrainingExample ex;
    const cv::Mat q[] = {s.query};
    ex.query = pool_patch_features(extract_patch_features(backbone, q), cfg.backbone.pool_kernel);
    ex.references = pool_patch_features(extract_patch_features(backbone, s.references), cfg.backbone.pool_kernel);
    ex.labels = PatchLabelGrid::from_grid(mask_to_patch_grid(s.mask, spec.grid_height, spec.grid_width));
    ex.label = s.label;
    ex.text = &text.at(data.category_of.at(item));
    return ex;
}

namespace {

struct ExampleResult {
    double total = 0.0;
    LossParts parts;
    std::map<std::string, Matrix> grads;
    std::string error;
};

} // namespace

Checkpoint train(const Config& cfg, const TrainingSet& data, const Backbone& backbone,
                 const std::function<void(const StepRecord&)>& on_step) {
    cfg.validate();
    if (data.size == 0) throw Error("training set is empty");
    const auto& spec = backbone.spec();

    std::map<std::string, TextEmbeddingPair> text;
    const PromptSet prompts = cfg.train.prompts_path.empty() ? PromptSet::defaults() : PromptSet::load(cfg.train.prompts_path);
    for (const auto& c : data.category_of)
        if (!text.count(c)) text.emplace(c, build_text_embeddings(prompt_class_name(c), prompts, backbone.text_encoder()));

    Model model = Model::init(spec, cfg.init, cfg.train.seed);
    Adam adam(cfg.train.lr, cfg.train.beta1, cfg.train.beta2, cfg.train.eps);
    const std::size_t batch = cfg.train.batch_size;
    const std::size_t per_epoch = (data.size + batch - 1) / batch;
    const std::size_t total_steps =
        cfg.train.steps > 0 ? cfg.train.steps : per_epoch * static_cast<std::size_t>(cfg.train.epochs);

    std::vector<StepRecord> trace;
    std::vector<std::size_t> order(data.size);
    int epoch = -1;
    for (std::size_t step = 0; step < total_steps; ++step) {
        const int e = static_cast<int>(step / per_epoch);
        if (e != epoch) {
            epoch = e;
            std::iota(order.begin(), order.end(), std::size_t{0});
            Rng rng = make_rng(cfg.train.seed, "epoch", static_cast<std::uint64_t>(e));
            for (std::size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1], order[static_cast<std::size_t>(uniform_index(rng, i))]);
        }
        const std::size_t begin = (step % per_epoch) * batch;
        const std::size_t end = std::min(data.size, begin + batch);
        const auto n = static_cast<std::ptrdiff_t>(end - begin);
        std::vector<ExampleResult> results(end - begin);

#pragma omp parallel for schedule(dynamic)
        for (std::ptrdiff_t b = 0; b < n; ++b) {
            auto& r = results[static_cast<std::size_t>(b)];
            try {
                const std::size_t item = order[begin + static_cast<std::size_t>(b)];
                const std::uint64_t seed = derive_seed(cfg.train.seed, "sample",
                                                       static_cast<std::uint64_t>(e) * data.size + begin +
                                                           static_cast<std::uint64_t>(b));
                const TrainingExample ex = make_example(cfg, data, backbone, item, seed, text);
                Tape tape;
                const Var loss = example_loss(tape, model, ex, cfg.loss, cfg.lookup, &r.parts);
                r.total = tape.value(loss)(0, 0);
                if (!std::isfinite(r.total)) continue;
                tape.backward(loss);
                model.visit([&](const std::string& name, const Matrix& p) {
                    if (const Matrix* g = tape.param_grad(p)) r.grads.emplace(name, *g);
                });
            } catch (const std::exception& ex) {
                r.error = ex.what();
            }
        }

        StepRecord rec;
        rec.step = step;
        rec.epoch = e;
        std::map<std::string, Matrix> grads;
        const double inv = 1.0 / static_cast<double>(results.size());
        for (std::size_t b = 0; b < results.size(); ++b) {
            const auto& r = results[b];
            if (!r.error.empty()) throw Error("training step " + std::to_string(step) + ": " + r.error);
            if (!std::isfinite(r.total)) {
                std::ostringstream os;
                os << "non-finite loss at step " << step << ", batch item " << b << " (query " << r.parts.query
                   << ", cqc " << r.parts.cqc << ", tac " << r.parts.tac << ")";
                throw Error(os.str());
            }
            rec.total += inv * r.total;
            rec.parts.query += inv * r.parts.query;
            rec.parts.cqc += inv * r.parts.cqc;
            rec.parts.tac += inv * r.parts.tac;
            for (const auto& [name, g] : r.grads) {
                auto [it, fresh] = grads.try_emplace(name, g.rows(), g.cols());
                auto& acc = it->second.data();
                for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += inv * g.data()[i];
            }
        }
        adam.step(model, grads);
        trace.push_back(rec);
        if (on_step) on_step(rec);
    }

    Checkpoint ckpt = Checkpoint::from_model(std::move(model), spec, cfg.backbone.pool_kernel);
    ckpt.config = cfg.to_json();
    ckpt.epoch = epoch + 1;
    ckpt.steps = total_steps;
    for (const auto& c : data.category_of)
        if (std::find(ckpt.categories.begin(), ckpt.categories.end(), c) == ckpt.categories.end())
            ckpt.categories.push_back(c);
    ckpt.trace = std::move(trace);
    return ckpt;
}

} // namespace dictas
