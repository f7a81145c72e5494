#include <doctest.h>
#include <json.hpp>

#include "ragnet/error.hpp"
#include "ragnet/trainer.hpp"
#include "support.hpp"

using namespace ragnet;

namespace {

GatModelConfig tiny_model(int fd = 3) {
    GatModelConfig cfg;
    cfg.feature_dim = fd;
    cfg.layer_sizes = {8, 8};
    cfg.mlp_sizes = {8, 10};
    return cfg;
}

// Two classes separable by mean node intensity.
std::vector<RagGraph> separable(Rng& rng, int n) {
    std::vector<RagGraph> out;
    for (int i = 0; i < n; ++i) {
        auto g = testing::random_graph(rng, 3 + static_cast<int>(rng.below(5)), 3, 0.4);
        const int label = i % 2;
        for (int v = 0; v < g.n_nodes; ++v) {
            g.features[static_cast<std::size_t>(v) * 3] = label ? 0.8 + 0.2 * rng.uniform01() : 0.2 * rng.uniform01();
        }
        g.label = label;
        out.push_back(std::move(g));
    }
    return out;
}

// Ten identical graphs labelled 0..9: any model scores exactly 0.1.
std::vector<RagGraph> chance_level_set(Rng& rng) {
    const auto base = testing::random_graph(rng, 5, 3, 0.5);
    std::vector<RagGraph> out;
    for (int c = 0; c < 10; ++c) {
        auto g = base;
        g.label = c;
        out.push_back(g);
    }
    return out;
}

TrainConfig quick(int epochs) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.seed = 5;
    return cfg;
}

}  // namespace

TEST_CASE("train: one epoch over 64 graphs with batch 32 takes exactly two steps") {
    Rng rng(1);
    const auto train_set = separable(rng, 64);
    const auto val_set = separable(rng, 8);
    std::int64_t steps = 0;
    TrainHooks hooks;
    hooks.on_step = [&](std::int64_t, double) { ++steps; };
    const auto r = train<float>(tiny_model(), train_set, val_set, quick(1), hooks);
    CHECK(steps == 2);
    CHECK(r.report.optimizer_steps == 2);
    CHECK(r.report.epochs.at(0).steps == 2);
    CHECK(r.optimizer.t == 2);
}

TEST_CASE("train: last partial batch is kept") {
    Rng rng(2);
    const auto train_set = separable(rng, 65);
    const auto val_set = separable(rng, 4);
    const auto r = train<float>(tiny_model(), train_set, val_set, quick(2));
    CHECK(r.report.epochs[0].steps == 3);
    CHECK(r.report.optimizer_steps == 6);
}

TEST_CASE("train: restart rule fires exactly below the threshold at the stall epoch") {
    CHECK(should_restart(TrainConfig{}, 10, 0.10));
    CHECK(should_restart(TrainConfig{}, 10, 0.1499));
    CHECK_FALSE(should_restart(TrainConfig{}, 10, 0.15));
    CHECK_FALSE(should_restart(TrainConfig{}, 9, 0.0));
    CHECK_FALSE(should_restart(TrainConfig{}, 11, 0.0));

    Rng rng(3);
    const auto train_set = separable(rng, 16);
    const auto val_set = chance_level_set(rng);
    auto cfg = quick(12);
    cfg.max_restarts = 2;
    int restarts_seen = 0;
    TrainHooks hooks;
    hooks.on_restart = [&](int attempt, const AttemptRecord& a) {
        ++restarts_seen;
        CHECK(attempt == restarts_seen);
        CHECK(a.epochs_run == 10);
        CHECK(a.last_val_accuracy == 0.1);
    };
    const auto r = train<float>(tiny_model(), train_set, val_set, cfg, hooks);
    CHECK(restarts_seen == 2);
    CHECK(r.report.restarts == 2);
    CHECK(r.report.attempts.size() == 3);
    CHECK(r.report.failed);
    CHECK(r.report.failure.find("0.15") != std::string::npos);
    CHECK(r.report.attempts[0].seed != r.report.attempts[1].seed);

    cfg.stall_threshold = 0.1;  // 0.1 is not below 0.1
    const auto ok = train<float>(tiny_model(), train_set, val_set, cfg);
    CHECK(ok.report.restarts == 0);
    CHECK_FALSE(ok.report.failed);
    CHECK(ok.report.epochs.size() == 12);
}

TEST_CASE("train: seeded runs are bitwise reproducible") {
    Rng rng(4);
    const auto graphs = separable(rng, 40);
    auto cfg = quick(3);
    cfg.batch_size = 8;
    const auto a = train<double>(tiny_model(), graphs, cfg);
    const auto b = train<double>(tiny_model(), graphs, cfg);
    CHECK(same_outcome(a.report, b.report));
    const auto pa = a.best_model.parameters(), pb = b.best_model.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(std::equal(pa[i].data().begin(), pa[i].data().end(), pb[i].data().begin()));
    }
    cfg.seed = 6;
    CHECK_FALSE(same_outcome(a.report, train<double>(tiny_model(), graphs, cfg).report));
}

TEST_CASE("train: best-validation model re-evaluates to its logged accuracy") {
    Rng rng(5);
    const auto train_set = separable(rng, 48);
    const auto val_set = separable(rng, 21);
    auto cfg = quick(6);
    cfg.batch_size = 8;
    const auto r = train<float>(tiny_model(), train_set, val_set, cfg);
    double best = 0;
    for (const auto& e : r.report.epochs) best = std::max(best, e.val_accuracy);
    CHECK(r.report.best_val_accuracy == best);
    CHECK(r.report.epochs.at(static_cast<std::size_t>(r.report.best_epoch - 1)).val_accuracy == best);
    CHECK(evaluate(r.best_model, val_set).accuracy == r.report.best_val_accuracy);
}

TEST_CASE("train: loss on a fixed batch decreases over the first five steps") {
    Rng rng(6);
    const auto graphs = separable(rng, 32);
    const auto batch = make_batch(graphs);
    auto model = GatModel<double>::init(tiny_model(), 11);
    auto params = model.parameters();
    nd::AdamState<double> adam;
    std::vector<double> losses;
    for (int step = 0; step < 6; ++step) {
        for (auto& p : params) p.zero_grad();
        const auto loss = nd::cross_entropy(model.forward(batch), std::span<const int>(batch.labels));
        losses.push_back(loss.item());
        nd::backward(loss);
        nd::adam_step(std::span(params), adam);
    }
    for (std::size_t i = 1; i < losses.size(); ++i) CHECK(losses[i] < losses[i - 1]);
}

TEST_CASE("train: separable toy graphs are learned") {
    Rng rng(7);
    const auto train_set = separable(rng, 96);
    const auto val_set = separable(rng, 32);
    auto cfg = quick(15);
    cfg.lr = 0.01;
    cfg.batch_size = 16;
    const auto r = train<float>(tiny_model(), train_set, val_set, cfg);
    CHECK(r.report.best_val_accuracy >= 0.9);
    CHECK(r.report.epochs.back().loss < r.report.epochs.front().loss);
}

TEST_CASE("train: every graph is visited exactly once per epoch") {
    // Distinct labels per graph make each batch's label multiset observable
    // through train accuracy of a model predicting one fixed class.
    Rng rng(8);
    auto train_set = separable(rng, 37);
    const auto val_set = separable(rng, 4);
    std::int64_t total_steps = 0;
    TrainHooks hooks;
    hooks.on_step = [&](std::int64_t, double) { ++total_steps; };
    auto cfg = quick(3);
    cfg.batch_size = 10;
    const auto r = train<float>(tiny_model(), train_set, val_set, cfg, hooks);
    CHECK(total_steps == 3 * 4);
    for (const auto& e : r.report.epochs) {
        // Accuracy is a count over exactly 37 graphs.
        const double scaled = e.train_accuracy * 37.0;
        CHECK(std::abs(scaled - std::round(scaled)) < 1e-9);
    }
}

TEST_CASE("train: split into train and validation uses the validation fraction") {
    Rng rng(9);
    const auto graphs = separable(rng, 50);
    const auto r = train<float>(tiny_model(), graphs, quick(1));
    CHECK(r.report.val_size == 5);
    CHECK(r.report.train_size == 45);
}

TEST_CASE("train: invalid inputs") {
    Rng rng(10);
    const auto graphs = separable(rng, 10);
    auto cfg = quick(1);
    cfg.stall_threshold = 1.0;
    CHECK_THROWS_AS(train<float>(tiny_model(), graphs, cfg), ArgumentError);
    cfg = quick(1);
    cfg.batch_size = 0;
    CHECK_THROWS_AS(train<float>(tiny_model(), graphs, cfg), ArgumentError);
    CHECK_THROWS_AS(train<float>(tiny_model(5), graphs, quick(1)), ContractError);
    auto unlabeled = graphs;
    unlabeled[3].label.reset();
    CHECK_THROWS_AS(train<float>(tiny_model(), unlabeled, quick(1)), ArgumentError);
}

TEST_CASE("evaluate: argmax ties go to the lowest class") {
    CHECK(argmax(std::vector<double>{0.1, 0.3, 0.3, 0.2}) == 1);
    CHECK(argmax(std::vector<double>(10, 0.1)) == 0);

    // Zero MLP output weights give a uniform 0.1 everywhere.
    Rng rng(11);
    auto model = GatModel<double>::init(tiny_model(), 1);
    auto& last = model.mlp().back();
    std::fill(last.weight.mutable_data().begin(), last.weight.mutable_data().end(), 0.0);
    std::vector<RagGraph> graphs;
    const int labels[] = {0, 3, 0, 7, 0, 1, 9, 0};
    for (int l : labels) {
        auto g = testing::random_graph(rng, 4, 3, 0.5);
        g.label = l;
        graphs.push_back(g);
    }
    const auto r = evaluate(model, graphs);
    CHECK(r.accuracy == 0.5);
    for (int p : r.predictions) CHECK(p == 0);
}

TEST_CASE("evaluate: confusion rows sum to class support; empty set rejected") {
    Rng rng(12);
    const auto model = GatModel<float>::init(tiny_model(), 3);
    auto graphs = separable(rng, 30);
    graphs[4].label = 7;
    const auto r = evaluate(model, graphs, 7);
    std::vector<std::int64_t> support(10, 0);
    for (const auto& g : graphs) ++support[static_cast<std::size_t>(*g.label)];
    std::int64_t diag = 0;
    for (std::size_t i = 0; i < 10; ++i) {
        std::int64_t row = 0;
        for (auto c : r.confusion[i]) row += c;
        CHECK(row == support[i]);
        diag += r.confusion[i][i];
    }
    CHECK(diag == r.correct);
    CHECK(r.probabilities.size() == 300);
    CHECK_THROWS_AS(evaluate(model, std::span<const RagGraph>{}), ArgumentError);
    const auto csv = r.confusion_csv();
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 11);
}

TEST_CASE("report: JSON and CSV outputs") {
    Rng rng(13);
    const auto r = train<float>(tiny_model(), separable(rng, 20), quick(2));
    const auto j = nlohmann::json::parse(r.report.to_json());
    CHECK(j["status"] == "ok");
    CHECK(j["epochs"].size() == 2);
    CHECK(j["best_epoch"] == r.report.best_epoch);
    CHECK(j["test_accuracy"].is_null());
    const auto csv = r.report.log_csv();
    CHECK(csv.rfind("epoch,loss,train_acc,val_acc,seconds\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}
