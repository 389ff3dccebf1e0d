#include <cmath>
#include <numeric>

#include "doctest.h"
#include "malt/errors.hpp"
#include "malt/model.hpp"
#include "test_util.hpp"

using namespace malt;

namespace {

Tensor stream_of(std::initializer_list<double> values) {
    std::vector<double> v(values);
    return Tensor({v.size(), 1}, v);
}

std::vector<double> column(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

LossFn model_loss(MaltModel& model, const MemoryWindow& w, const std::vector<int>& labels) {
    return [&model, w, labels](Graph& g, ParamStore&) { return model.loss(g, w, labels).total; };
}

}  // namespace

TEST_CASE("partition_memory") {
    // a..e = 1..5
    const auto full = partition_memory(stream_of({1, 2, 3, 4, 5}), 2, 3);
    CHECK(column(full.short_term) == std::vector<double>{4, 5});
    CHECK(column(full.long_term) == std::vector<double>{1, 2, 3});
    CHECK(full.long_valid == std::vector<bool>{true, true, true});

    const auto padded = partition_memory(stream_of({1, 2, 3, 4}), 2, 3);
    CHECK(column(padded.short_term) == std::vector<double>{3, 4});
    CHECK(column(padded.long_term) == std::vector<double>{0, 1, 2});
    CHECK(padded.long_valid == std::vector<bool>{false, true, true});

    const auto start = partition_memory(stream_of({7, 8}), 2, 3);
    CHECK(column(start.long_term) == std::vector<double>{0, 0, 0});
    CHECK(start.long_valid == std::vector<bool>{false, false, false});
    CHECK(start.short_valid == std::vector<bool>{true, true});

    CHECK_THROWS_AS(partition_memory(Tensor({0, 1}), 2, 3), ContractError);
}

TEST_CASE("causal frame source refuses future frames") {
    const Tensor s = stream_of({1, 2, 3, 4, 5, 6});
    CausalFrameSource src(s, 3);
    CHECK(src.frame(3)[0] == 4.0);
    CHECK_THROWS_AS(src.frame(4), ContractError);
    const auto w = partition_memory(src, 2, 2);
    CHECK(src.max_index_read() == 3);
    CHECK(column(w.short_term) == std::vector<double>{3, 4});
}

TEST_CASE("forward shapes and determinism") {
    MaltConfig cfg = tiny_config();
    MaltModel model(cfg);
    Rng rng(1);
    for (std::size_t T : {1u, 3u, 12u, 40u}) {
        const Tensor stream = random_normal({T, cfg.input_dim}, rng);
        Graph g;
        const auto r = model.forward(g, partition_memory(stream, cfg.short_frames, cfg.long_frames));
        CHECK(g.value(r.logits).shape() == Shape{cfg.short_frames, cfg.classes + 1});
        CHECK(r.features.size() == cfg.branches);
    }
    const Tensor stream = random_normal({30, cfg.input_dim}, rng);
    const auto w = partition_memory(stream, cfg.short_frames, cfg.long_frames);
    MaltModel twin(cfg);
    CHECK(model.predict(w) == twin.predict(w));
    CHECK(model.predict(w) == model.predict(w));
}

TEST_CASE("m_s != L maps every frame to a token") {
    MaltConfig cfg = tiny_config();
    cfg.short_frames = 6;
    MaltModel model(cfg);
    Rng rng(2);
    Graph g;
    const auto r = model.forward(g, partition_memory(random_normal({20, cfg.input_dim}, rng), 6, cfg.long_frames));
    CHECK(g.value(r.logits).shape() == Shape{6, cfg.classes + 1});
    CHECK(g.value(r.decoded).shape() == Shape{cfg.latent_len, cfg.model_dim});
}

TEST_CASE("untrained model is near uniform") {
    MaltConfig cfg;
    cfg.classes = 5;
    cfg.input_dim = 16;
    cfg.long_frames = 32;
    double sum = 0.0;
    int count = 0;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        cfg.seed = seed;
        MaltModel model(cfg);
        Rng rng(seed * 7);
        for (int b = 0; b < 4; ++b) {
            std::vector<int> labels(cfg.short_frames);
            for (auto& y : labels) y = int(rng.below(cfg.classes + 1));
            Graph g;
            const auto w = partition_memory(random_normal({60, cfg.input_dim}, rng), cfg.short_frames, cfg.long_frames);
            sum += g.value(main_loss(g, model.forward(g, w).logits, labels, cfg.classes)).item();
            ++count;
        }
    }
    CHECK(std::abs(sum / count - std::log(6.0)) < 0.1);
}

TEST_CASE("main_loss examples") {
    Graph g;
    const Var perfect = g.constant(Tensor::matrix({{1000, 0, 0}, {0, 0, 1000}}));
    CHECK(g.value(main_loss(g, perfect, {0, 2}, 2)).item() == 0.0);
    const Var uniform = g.constant(Tensor({3, 4}, 0.25));
    CHECK(g.value(main_loss(g, uniform, {0, 1, 3}, 3)).item() == doctest::Approx(std::log(4.0)).epsilon(1e-14));
    double previous = 1e9;
    for (double margin : {0.5, 1.0, 2.0, 4.0}) {
        const Var soft = g.constant(Tensor::matrix({{margin, 0, 0}, {margin, 0, 0}}));
        const double l = g.value(main_loss(g, soft, {0, 0}, 2)).item();
        CHECK(l > 0.0);
        CHECK(l < previous);
        previous = l;
    }
    CHECK_THROWS_AS(main_loss(g, uniform, {0, 4, 1}, 3), DataError);
}

TEST_CASE("loss composition") {
    SUBCASE("loss weight arithmetic") {
        Graph g;
        const Var total = weighted_sum(g, {g.constant(Tensor::scalar(2.0)), g.constant(Tensor::scalar(1.0)),
                                           g.constant(Tensor::scalar(1.0))},
                                       {1.0, 0.4, 0.4});
        CHECK(g.value(total).item() == doctest::Approx(2.8).epsilon(1e-15));
    }
    MaltConfig cfg = tiny_config();
    Rng rng(3);
    const auto w = partition_memory(random_normal({20, cfg.input_dim}, rng), cfg.short_frames, cfg.long_frames);
    const std::vector<int> labels{0, 1, 2, 2};
    SUBCASE("one aux term per branch and the weighted identity") {
        MaltModel model(cfg);
        Graph g;
        const auto r = model.loss(g, w, labels);
        REQUIRE(r.breakdown.aux.size() == 2);
        double combined = cfg.alpha * r.breakdown.main;
        for (double a : r.breakdown.aux) combined += cfg.beta * a;
        CHECK(std::abs(r.breakdown.total - combined) < 1e-12);
    }
    SUBCASE("beta = 0 leaves alpha * main") {
        cfg.beta = 0.0;
        cfg.alpha = 1.3;
        MaltModel model(cfg);
        Graph g;
        const auto r = model.loss(g, w, labels);
        CHECK(r.breakdown.total == 1.3 * r.breakdown.main);
    }
    SUBCASE("wrong label count") {
        MaltModel model(cfg);
        Graph g;
        CHECK_THROWS_AS(model.loss(g, w, {0, 1}), ContractError);
        CHECK_THROWS_AS(model.loss(g, w, {0, 1, 3, 0}), DataError);
    }
}

TEST_CASE("parameter counts") {
    MaltConfig cfg = tiny_config();
    cfg.latent_len = 8;
    std::size_t decoder = 0, encoder = 0;
    for (std::size_t N : {1u, 2u, 3u, 4u}) {
        cfg.branches = N;
        MaltModel model(cfg);
        const auto pc = parameter_count(model.params());
        if (N == 1) decoder = pc.per_module.at("decoder");
        CHECK(pc.per_module.at("decoder") == decoder);
        CHECK(pc.per_module.at("encoder") > encoder);
        encoder = pc.per_module.at("encoder");
        std::size_t sum = 0;
        for (const auto& [module, n] : pc.per_module) sum += n;
        CHECK(pc.per_module.size() == 4);
        CHECK(pc.total == sum);
        CHECK(pc.total == pc.per_module.at("embed") + pc.per_module.at("encoder") + pc.per_module.at("decoder") +
                              pc.per_module.at("classifier"));
    }
    cfg.branches = 3;
    cfg.fusion = FusionMode::cascade;
    CHECK(parameter_count(MaltModel(cfg).params()).per_module.at("decoder") == 3 * decoder);
}

TEST_CASE("end-to-end gradients match finite differences") {
    MaltConfig cfg = tiny_config();
    MaltModel model(cfg);
    Rng rng(17);
    const auto w = partition_memory(random_normal({cfg.short_frames + cfg.long_frames, cfg.input_dim}, rng),
                                    cfg.short_frames, cfg.long_frames);
    const auto results = check_random_params(model_loss(model, w, {0, 2, 1, 1}), model.params(), 32, rng);
    REQUIRE(results.size() == 32);
    for (const auto& r : results) {
        CAPTURE(r.param);
        CHECK(r.rel_error < 1e-6);
    }
}

TEST_CASE("permuting class indices leaves the loss unchanged") {
    MaltConfig cfg = tiny_config();
    MaltModel model(cfg);
    Rng rng(19);
    const auto w = partition_memory(random_normal({15, cfg.input_dim}, rng), cfg.short_frames, cfg.long_frames);
    const std::vector<int> labels{0, 2, 1, 1};
    Graph g0;
    const double before = model.loss(g0, w, labels).breakdown.total;

    const std::vector<int> perm{2, 0, 1};  // class c -> perm[c]
    MaltModel permuted(cfg);
    for (auto& [name, e] : permuted.params()) {
        if (name.rfind("classifier.", 0) != 0 || name.find("norm") != std::string::npos) continue;
        const Tensor orig = e.value;
        for (std::size_t r = 0; r < orig.rows(); ++r) {
            for (std::size_t c = 0; c < 3; ++c) e.value.at(r, std::size_t(perm[c])) = orig.at(r, c);
        }
    }
    std::vector<int> relabeled;
    for (int y : labels) relabeled.push_back(perm[std::size_t(y)]);
    Graph g1;
    CHECK(std::abs(permuted.loss(g1, w, relabeled).breakdown.total - before) < 1e-12);
}

TEST_CASE("frames older than the window do not matter") {
    MaltConfig cfg = tiny_config();
    MaltModel model(cfg);
    Rng rng(23);
    const std::size_t span = cfg.short_frames + cfg.long_frames;
    const Tensor recent = random_normal({span, cfg.input_dim}, rng);
    const Tensor older = random_normal({7, cfg.input_dim}, rng);
    Tensor longer({span + 7, cfg.input_dim});
    std::copy(older.values().begin(), older.values().end(), longer.values().begin());
    std::copy(recent.values().begin(), recent.values().end(), longer.values().begin() + std::ptrdiff_t(older.size()));
    const Tensor a = model.predict(partition_memory(recent, cfg.short_frames, cfg.long_frames));
    const Tensor b = model.predict(partition_memory(longer, cfg.short_frames, cfg.long_frames));
    CHECK(a == b);
}

TEST_CASE("config validation") {
    MaltConfig ok;
    CHECK_NOTHROW(ok.validate());
    auto rejects = [](auto mutate) {
        MaltConfig c;
        mutate(c);
        CHECK_THROWS_AS(c.validate(), ConfigError);
        CHECK_THROWS_AS(MaltModel{c}, ConfigError);
    };
    rejects([](MaltConfig& c) { c.short_frames = c.long_frames; });
    rejects([](MaltConfig& c) { c.latent_len = 10; c.branches = 3; });
    rejects([](MaltConfig& c) { c.topk = 0; });
    rejects([](MaltConfig& c) { c.heads = 5; });
    rejects([](MaltConfig& c) { c.branches = 0; });
    rejects([](MaltConfig& c) { c.classes = 0; });

    MaltConfig round;
    round.fusion = FusionMode::add;
    round.beta = 0.25;
    CHECK(nlohmann::json(round).get<MaltConfig>() == round);
    CHECK_THROWS_AS(parse_config_text("{\"m_s\": 4,}").get<MaltConfig>(), ConfigError);
    CHECK_THROWS_AS(parse_config_text("{\"bogus\": 4}").get<MaltConfig>(), ConfigError);
    const auto commented = parse_config_text("{\n  // full scale: 512\n  \"m_l\": 64\n}").get<MaltConfig>();
    CHECK(commented.long_frames == 64);
}
