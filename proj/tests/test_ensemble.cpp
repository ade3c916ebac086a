#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "carft/ensemble.hpp"
#include "carft/eval.hpp"
#include "carft/rng.hpp"
#include "carft/trainer.hpp"
#include "carft/worldgen.hpp"

using namespace carft;

namespace {

// One pre-trained ancestor and two quick fine-tunes shared by every case.
struct EnsembleLab {
    WorldSpec world;
    std::vector<PromptTemplate> templates;
    ClassNameSet classes;
    Checkpoint zero_shot;
    Checkpoint tuned_a;
    Checkpoint tuned_b;
    Dataset id_test, ood_test;
};

const EnsembleLab& lab() {
    static EnsembleLab lab = [] {
        EnsembleLab out;
        WorldConfig cfg;
        cfg.classes = 4;
        cfg.contexts = 3;
        cfg.latent_dim = 6;
        cfg.input_dim = 12;
        cfg.sigma = 0.05;
        cfg.seed = 4004;
        out.world = generate_world(cfg);
        out.templates = default_templates(out.world);
        out.classes = world_class_names(out.world);
        PretrainConfig pre;
        pre.epochs = 10;
        pre.n_samples = 768;
        pre.batch = 64;
        pre.hidden_dim = 32;
        pre.embed_dim = 8;
        pre.seed = 4004;
        out.zero_shot = pretrain_contrastive(out.world, pre, out.templates, out.classes);

        SplitPlan plan = make_split_plan(out.world, std::vector<std::size_t>{2}, 4004);
        plan.n_train = 512;
        plan.n_id_test = 256;
        plan.n_ood_test = 256;
        const Dataset train = sample_split(out.world, plan, SplitKind::train);
        out.id_test = sample_split(out.world, plan, SplitKind::id_test);
        out.ood_test = sample_split(out.world, plan, SplitKind::ood_test);

        TrainConfig cfg_ft;
        cfg_ft.method = Method::tp_ft;
        cfg_ft.lr = 1e-3;
        cfg_ft.batch = 64;
        cfg_ft.epochs = 4;
        cfg_ft.seed = 1;
        out.tuned_a = finetune(out.zero_shot, train, cfg_ft, &out.templates, &out.classes).model;
        cfg_ft.seed = 2;
        cfg_ft.method = Method::car_ft;
        out.tuned_b = finetune(out.zero_shot, train, cfg_ft, &out.templates, &out.classes).model;
        return out;
    }();
    return lab;
}

bool tensors_equal(const Checkpoint& a, const Checkpoint& b) {
    return a.image.w1 == b.image.w1 && a.image.b1 == b.image.b1 && a.image.w2 == b.image.w2 &&
           a.image.b2 == b.image.b2 && a.head->weight == b.head->weight;
}

}  // namespace

TEST_CASE("interpolation endpoints reproduce the inputs") {
    const auto& l = lab();
    const Checkpoint at0 = interpolate(l.zero_shot, l.tuned_a, 0.0);
    const Checkpoint at1 = interpolate(l.zero_shot, l.tuned_a, 1.0);
    CHECK(accuracy(at0, l.id_test) == accuracy(l.zero_shot, l.id_test));
    CHECK(accuracy(at0, l.ood_test) == accuracy(l.zero_shot, l.ood_test));
    CHECK(accuracy(at1, l.id_test) == accuracy(l.tuned_a, l.id_test));
    CHECK(accuracy(at1, l.ood_test) == accuracy(l.tuned_a, l.ood_test));
}

TEST_CASE("interpolation at one half is the elementwise mean") {
    const auto& l = lab();
    const Checkpoint mid = interpolate(l.zero_shot, l.tuned_a, 0.5);
    for (std::size_t i = 0; i < mid.image.w1.size(); ++i)
        CHECK(mid.image.w1.values()[i] ==
              0.5 * l.zero_shot.image.w1.values()[i] + 0.5 * l.tuned_a.image.w1.values()[i]);
}

TEST_CASE("interpolation is symmetric on a dyadic grid") {
    const auto& l = lab();
    for (int i = 0; i <= 16; ++i) {
        const double w = static_cast<double>(i) / 16.0;  // exact in binary
        const Checkpoint ab = interpolate(l.zero_shot, l.tuned_a, w);
        const Checkpoint ba = interpolate(l.tuned_a, l.zero_shot, 1.0 - w);
        CHECK(tensors_equal(ab, ba));
    }
}

TEST_CASE("interpolation validates its inputs") {
    const auto& l = lab();
    CHECK_THROWS_AS(interpolate(l.zero_shot, l.tuned_a, -0.1), ConfigError);
    CHECK_THROWS_AS(interpolate(l.zero_shot, l.tuned_a, 1.5), ConfigError);
    Checkpoint reshaped = l.tuned_a;
    reshaped.head->weight = Matrix(reshaped.head->weight.rows(), 2);
    CHECK_THROWS_AS(interpolate(l.zero_shot, reshaped, 0.5), DataError);
    Checkpoint other_phi = l.tuned_a;
    other_phi.text.embed(0, 0) += 1.0;
    CHECK_THROWS_AS(interpolate(l.zero_shot, other_phi, 0.5), DataError);
}

TEST_CASE("uniform soup of identical checkpoints is that checkpoint") {
    const auto& l = lab();
    const std::vector<Checkpoint> caterer{l.tuned_a, l.tuned_a, l.tuned_a};
    const Checkpoint soup = uniform_soup(caterer);
    CHECK(tensors_equal(soup, l.tuned_a));
}

TEST_CASE("uniform soup of a single candidate is that candidate") {
    const auto& l = lab();
    const std::vector<Checkpoint> one{l.tuned_b};
    CHECK(tensors_equal(uniform_soup(one), l.tuned_b));
}

TEST_CASE("uniform soup of two models is the elementwise mean") {
    const auto& l = lab();
    const std::vector<Checkpoint> two{l.tuned_a, l.tuned_b};
    const Checkpoint soup = uniform_soup(two);
    for (std::size_t i = 0; i < soup.image.w2.size(); ++i) {
        const double a = l.tuned_a.image.w2.values()[i];
        const double b = l.tuned_b.image.w2.values()[i];
        CHECK(soup.image.w2.values()[i] == doctest::Approx(0.5 * (a + b)).epsilon(1e-15));
    }
}

TEST_CASE("uniform soup rejects empty and incompatible inputs") {
    const auto& l = lab();
    CHECK_THROWS_AS(uniform_soup(std::vector<Checkpoint>{}), DataError);
    Checkpoint other_tau = l.tuned_a;
    other_tau.logit_scale *= 2.0;
    const std::vector<Checkpoint> bad{l.tuned_a, other_tau};
    CHECK_THROWS_AS(uniform_soup(bad), DataError);
}

TEST_CASE("greedy soup keeps good members and drops a spoiled one") {
    const auto& l = lab();
    // Corrupt a copy with heavy noise so admitting it tanks accuracy.
    Checkpoint spoiled = l.tuned_a;
    Rng rng(5150);
    for (double& v : spoiled.image.w1.values()) v += rng.normal(0.0, 5.0);
    for (double& v : spoiled.head->weight.values()) v += rng.normal(0.0, 5.0);

    std::vector<std::pair<std::string, Checkpoint>> candidates = {
        {"a", l.tuned_a}, {"b", l.tuned_b}, {"spoiled", spoiled}};
    const GreedySoupResult result = greedy_soup(candidates, l.id_test);

    for (const std::string& name : result.members) CHECK(name != "spoiled");
    // Validation accuracy never drops below the best single member.
    double best_single = 0.0;
    for (const auto& [name, ckpt] : candidates)
        best_single = std::max(best_single, accuracy(ckpt, l.id_test));
    CHECK(accuracy(result.soup, l.id_test) >= best_single);
}

TEST_CASE("greedy soup of identical candidates selects everything") {
    const auto& l = lab();
    std::vector<std::pair<std::string, Checkpoint>> candidates = {
        {"x", l.tuned_a}, {"y", l.tuned_a}, {"z", l.tuned_a}};
    const GreedySoupResult result = greedy_soup(candidates, l.id_test);
    CHECK(result.members.size() == 3);
    CHECK(result.members[0] == "x");  // ties broken by name ascending
    CHECK(tensors_equal(result.soup, l.tuned_a));
}

TEST_CASE("greedy soup accuracy beats its best member across random candidate sets") {
    const auto& l = lab();
    Rng rng(808);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<std::pair<std::string, Checkpoint>> candidates;
        const std::size_t count = 2 + rng.uniform_index(3);
        for (std::size_t i = 0; i < count; ++i) {
            Checkpoint jittered = (i % 2 == 0) ? l.tuned_a : l.tuned_b;
            const double noise = 0.02 * static_cast<double>(rng.uniform_index(4));
            for (double& v : jittered.image.w2.values()) v += rng.normal(0.0, noise);
            candidates.emplace_back("cand" + std::to_string(i), std::move(jittered));
        }
        double best_single = 0.0;
        for (const auto& [name, ckpt] : candidates)
            best_single = std::max(best_single, accuracy(ckpt, l.id_test));
        const GreedySoupResult result = greedy_soup(candidates, l.id_test);
        CHECK(accuracy(result.soup, l.id_test) >= best_single);
        CHECK_FALSE(result.members.empty());
    }
}

TEST_CASE("wise curve covers the grid with both endpoints") {
    const auto& l = lab();
    const auto curve = wise_curve(l.zero_shot, l.tuned_a, l.id_test, l.ood_test, 5);
    REQUIRE(curve.size() == 5);
    CHECK(curve.front().mix == 0.0);
    CHECK(curve.back().mix == 1.0);
    CHECK(curve.front().id_accuracy == accuracy(l.zero_shot, l.id_test));
    CHECK(curve.back().id_accuracy == accuracy(l.tuned_a, l.id_test));
    for (std::size_t i = 1; i < curve.size(); ++i) CHECK(curve[i].mix > curve[i - 1].mix);
    CHECK_THROWS_AS(wise_curve(l.zero_shot, l.tuned_a, l.id_test, l.ood_test, 1), ConfigError);
}

TEST_CASE("curve CSV round trips") {
    const auto& l = lab();
    const auto curve = wise_curve(l.zero_shot, l.tuned_a, l.id_test, l.ood_test, 3);
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "carft_curve";
    fs::create_directories(dir);
    const std::string path = (dir / "curve.csv").string();
    write_curve(curve, path);
    const auto back = read_curve(path);
    REQUIRE(back.size() == curve.size());
    for (std::size_t i = 0; i < curve.size(); ++i) {
        CHECK(back[i].mix == curve[i].mix);
        CHECK(back[i].id_accuracy == curve[i].id_accuracy);
        CHECK(back[i].ood_accuracy == curve[i].ood_accuracy);
    }
    fs::remove_all(dir);
}

TEST_CASE("soup evaluates identically after a save/load round trip") {
    const auto& l = lab();
    const std::vector<Checkpoint> two{l.tuned_a, l.tuned_b};
    const Checkpoint soup = uniform_soup(two);
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "carft_soup";
    fs::create_directories(dir);
    const std::string path = (dir / "soup.ckpt").string();
    save_checkpoint(soup, path);
    const Checkpoint back = load_checkpoint(path);
    CHECK(accuracy(back, l.id_test) == accuracy(soup, l.id_test));
    CHECK(accuracy(back, l.ood_test) == accuracy(soup, l.ood_test));
    fs::remove_all(dir);
}
