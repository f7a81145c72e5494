#include "ragnet/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ragnet/dataio.hpp"
#include "ragnet/error.hpp"
#include "ragnet/random.hpp"

namespace ragnet {

void TrainConfig::validate() const {
    if (epochs < 1) throw ArgumentError("train config: epochs must be >= 1");
    if (batch_size < 1) throw ArgumentError("train config: batch_size must be >= 1");
    if (!(lr > 0.0)) throw ArgumentError("train config: lr must be positive");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
        throw ArgumentError("train config: betas must lie in (0,1)");
    }
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ArgumentError("train config: val_fraction must lie in (0,1)");
    if (stall_epochs < 1) throw ArgumentError("train config: stall_epochs must be >= 1");
    if (!(stall_threshold > 0.0 && stall_threshold < 1.0)) {
        throw ArgumentError("train config: stall_threshold must lie in (0,1)");
    }
    if (max_restarts < 0) throw ArgumentError("train config: max_restarts must be >= 0");
}

bool should_restart(const TrainConfig& cfg, int epoch, double val_accuracy) {
    return epoch == cfg.stall_epochs && val_accuracy < cfg.stall_threshold;
}

std::string TrainReport::to_json() const {
    nlohmann::ordered_json j;
    j["status"] = failed ? "failed" : "ok";
    if (failed) j["failure"] = failure;
    j["train_size"] = train_size;
    j["val_size"] = val_size;
    j["restarts"] = restarts;
    j["best_epoch"] = best_epoch;
    j["best_val_accuracy"] = best_val_accuracy;
    j["test_accuracy"] = test_accuracy ? nlohmann::ordered_json(*test_accuracy) : nlohmann::ordered_json(nullptr);
    j["optimizer_steps"] = optimizer_steps;
    auto& attempts_j = j["attempts"] = nlohmann::ordered_json::array();
    for (const auto& a : attempts) {
        attempts_j.push_back({{"seed", a.seed},
                              {"epochs_run", a.epochs_run},
                              {"last_val_accuracy", a.last_val_accuracy},
                              {"restarted", a.restarted}});
    }
    auto& epochs_j = j["epochs"] = nlohmann::ordered_json::array();
    for (const auto& e : epochs) {
        epochs_j.push_back({{"epoch", e.epoch},
                            {"loss", e.loss},
                            {"train_accuracy", e.train_accuracy},
                            {"val_accuracy", e.val_accuracy},
                            {"seconds", e.seconds},
                            {"steps", e.steps}});
    }
    return j.dump(2) + "\n";
}

std::string TrainReport::log_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "epoch,loss,train_acc,val_acc,seconds\n";
    for (const auto& e : epochs) {
        os << e.epoch << ',' << e.loss << ',' << e.train_accuracy << ',' << e.val_accuracy << ',' << e.seconds << '\n';
    }
    return os.str();
}

bool same_outcome(const TrainReport& a, const TrainReport& b) {
    auto strip = [](std::vector<EpochRecord> v) {
        for (auto& e : v) e.seconds = 0.0;
        return v;
    };
    return strip(a.epochs) == strip(b.epochs) && a.attempts == b.attempts && a.best_epoch == b.best_epoch &&
           a.best_val_accuracy == b.best_val_accuracy && a.test_accuracy == b.test_accuracy &&
           a.restarts == b.restarts && a.optimizer_steps == b.optimizer_steps && a.failed == b.failed &&
           a.train_size == b.train_size && a.val_size == b.val_size;
}

int argmax(std::span<const double> row) {
    if (row.empty()) throw ArgumentError("argmax: empty row");
    int best = 0;
    for (std::size_t j = 1; j < row.size(); ++j) {
        if (row[j] > row[static_cast<std::size_t>(best)]) best = static_cast<int>(j);
    }
    return best;
}

std::string EvalResult::confusion_csv() const {
    std::ostringstream os;
    const std::size_t k = confusion.size();
    os << "true\\pred";
    for (std::size_t j = 0; j < k; ++j) os << ',' << j;
    os << '\n';
    for (std::size_t i = 0; i < k; ++i) {
        os << i;
        for (auto c : confusion[i]) os << ',' << c;
        os << '\n';
    }
    return os.str();
}

std::string EvalResult::probabilities_csv() const {
    std::ostringstream os;
    os.precision(9);
    const std::size_t k = confusion.size();
    os << "index,prediction";
    for (std::size_t j = 0; j < k; ++j) os << ",p" << j;
    os << '\n';
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        os << i << ',' << predictions[i];
        for (std::size_t j = 0; j < k; ++j) os << ',' << probabilities[i * k + j];
        os << '\n';
    }
    return os.str();
}

namespace {

void check_dataset(const GatModelConfig& model_cfg, std::span<const RagGraph> graphs, const char* what) {
    for (std::size_t i = 0; i < graphs.size(); ++i) {
        const auto& g = graphs[i];
        if (g.feature_dim != model_cfg.feature_dim) {
            throw ContractError(std::string(what) + " graph " + std::to_string(i) + " has feature dim " +
                                std::to_string(g.feature_dim) + ", model expects " +
                                std::to_string(model_cfg.feature_dim));
        }
        if (!g.label) throw ArgumentError(std::string(what) + " graph " + std::to_string(i) + " has no label");
        if (*g.label < 0 || *g.label >= model_cfg.num_classes()) {
            throw ArgumentError(std::string(what) + " graph " + std::to_string(i) + " has label " +
                                std::to_string(*g.label) + " outside [0, " + std::to_string(model_cfg.num_classes()) +
                                ")");
        }
    }
}

template <typename T>
void count_correct(const nd::Tensor<T>& probs, std::span<const int> labels, std::int64_t& correct) {
    const std::size_t k = probs.cols();
    const auto p = probs.data();
    std::vector<double> row(k);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        for (std::size_t j = 0; j < k; ++j) row[j] = static_cast<double>(p[i * k + j]);
        if (argmax(row) == labels[i]) ++correct;
    }
}

}  // namespace

template <typename T>
EvalResult evaluate(const GatModel<T>& model, std::span<const RagGraph> graphs, int batch_size) {
    if (graphs.empty()) throw ArgumentError("evaluate: empty graph set");
    if (batch_size < 1) throw ArgumentError("evaluate: batch_size must be >= 1");
    check_dataset(model.config(), graphs, "evaluate:");
    const std::size_t k = static_cast<std::size_t>(model.config().num_classes());
    EvalResult r;
    r.total = static_cast<std::int64_t>(graphs.size());
    r.confusion.assign(k, std::vector<std::int64_t>(k, 0));
    r.predictions.reserve(graphs.size());
    r.probabilities.reserve(graphs.size() * k);
    std::vector<double> row(k);
    for (std::size_t start = 0; start < graphs.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t stop = std::min(graphs.size(), start + static_cast<std::size_t>(batch_size));
        const auto batch = make_batch(graphs.subspan(start, stop - start));
        const auto probs = model.forward(batch);
        const auto p = probs.data();
        for (std::size_t i = 0; i < stop - start; ++i) {
            for (std::size_t j = 0; j < k; ++j) row[j] = static_cast<double>(p[i * k + j]);
            const int pred = argmax(row);
            const int truth = *graphs[start + i].label;
            r.predictions.push_back(pred);
            r.probabilities.insert(r.probabilities.end(), row.begin(), row.end());
            ++r.confusion[static_cast<std::size_t>(truth)][static_cast<std::size_t>(pred)];
            if (pred == truth) ++r.correct;
        }
    }
    r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
    return r;
}

template <typename T>
TrainResult<T> train(const GatModelConfig& model_cfg, std::span<const RagGraph> graphs, const TrainConfig& cfg,
                     const TrainHooks& hooks) {
    cfg.validate();
    if (graphs.size() < 2) throw ArgumentError("train: need at least 2 graphs to split off validation");
    auto [val_idx, train_idx] = split_indices(graphs.size(), cfg.val_fraction, derive_seed(cfg.seed, 0x5e1f));
    if (train_idx.empty()) throw ArgumentError("train: validation split leaves no training graphs");
    std::vector<RagGraph> train_set, val_set;
    train_set.reserve(train_idx.size());
    val_set.reserve(val_idx.size());
    for (auto i : train_idx) train_set.push_back(graphs[i]);
    for (auto i : val_idx) val_set.push_back(graphs[i]);
    return train<T>(model_cfg, train_set, val_set, cfg, hooks);
}

template <typename T>
TrainResult<T> train(const GatModelConfig& model_cfg, std::span<const RagGraph> train_graphs,
                     std::span<const RagGraph> val_graphs, const TrainConfig& cfg, const TrainHooks& hooks) {
    cfg.validate();
    model_cfg.validate();
    if (train_graphs.empty()) throw ArgumentError("train: empty training set");
    if (val_graphs.empty()) throw ArgumentError("train: empty validation set");
    check_dataset(model_cfg, train_graphs, "train:");
    check_dataset(model_cfg, val_graphs, "validation:");

    using Clock = std::chrono::steady_clock;
    const std::size_t n = train_graphs.size();
    const auto bs = static_cast<std::size_t>(cfg.batch_size);

    TrainResult<T> result;
    TrainReport& report = result.report;
    report.train_size = static_cast<int>(n);
    report.val_size = static_cast<int>(val_graphs.size());

    for (int attempt = 0;; ++attempt) {
        const std::uint64_t attempt_seed = derive_seed(cfg.seed, 0x100 + static_cast<std::uint64_t>(attempt));
        auto model = GatModel<T>::init(model_cfg, derive_seed(attempt_seed, 0));
        auto params = model.parameters();
        Rng shuffler(derive_seed(attempt_seed, 1));
        nd::AdamState<T> adam;
        adam.lr = cfg.lr;
        adam.beta1 = cfg.beta1;
        adam.beta2 = cfg.beta2;

        report.epochs.clear();
        report.best_epoch = 0;
        report.best_val_accuracy = 0.0;
        report.optimizer_steps = 0;
        GatModel<T> best;
        bool have_best = false;
        AttemptRecord record;
        record.seed = attempt_seed;

        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::vector<const RagGraph*> members;
        std::vector<int> labels;
        bool stalled = false;

        for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
            const auto t0 = Clock::now();
            shuffler.shuffle(std::span(order));
            double loss_sum = 0.0;
            std::int64_t correct = 0;
            std::int64_t steps = 0;
            for (std::size_t start = 0; start < n; start += bs) {
                const std::size_t stop = std::min(n, start + bs);
                members.clear();
                labels.clear();
                for (std::size_t i = start; i < stop; ++i) {
                    members.push_back(&train_graphs[order[i]]);
                    labels.push_back(*train_graphs[order[i]].label);
                }
                const auto batch = make_batch(std::span<const RagGraph* const>(members));
                for (auto& p : params) p.zero_grad();
                const auto probs = model.forward(batch);
                const auto loss = nd::cross_entropy(probs, std::span<const int>(labels));
                count_correct(probs, labels, correct);
                const double batch_loss = static_cast<double>(loss.item());
                loss_sum += batch_loss * static_cast<double>(labels.size());
                nd::backward(loss);
                nd::adam_step(std::span(params), adam);
                ++steps;
                ++report.optimizer_steps;
                if (hooks.on_step) hooks.on_step(report.optimizer_steps, batch_loss);
            }
            const auto val = evaluate(model, val_graphs);
            EpochRecord rec;
            rec.epoch = epoch;
            rec.loss = loss_sum / static_cast<double>(n);
            rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
            rec.val_accuracy = val.accuracy;
            rec.steps = steps;
            rec.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
            report.epochs.push_back(rec);
            if (hooks.on_epoch) hooks.on_epoch(rec);

            if (!have_best || val.accuracy > report.best_val_accuracy) {
                best = model.clone();
                have_best = true;
                report.best_epoch = epoch;
                report.best_val_accuracy = val.accuracy;
            }
            record.epochs_run = epoch;
            record.last_val_accuracy = val.accuracy;
            if (should_restart(cfg, epoch, val.accuracy)) {
                stalled = true;
                break;
            }
        }

        record.restarted = stalled && attempt < cfg.max_restarts;
        report.attempts.push_back(record);
        result.best_model = std::move(best);
        result.optimizer = std::move(adam);
        if (!stalled) break;
        if (attempt >= cfg.max_restarts) {
            report.failed = true;
            std::ostringstream msg;
            msg << "validation accuracy " << record.last_val_accuracy << " below " << cfg.stall_threshold
                << " at epoch " << cfg.stall_epochs << " in all " << attempt + 1 << " attempts (max_restarts "
                << cfg.max_restarts << ")";
            report.failure = msg.str();
            break;
        }
        ++report.restarts;
        if (hooks.on_restart) hooks.on_restart(attempt + 1, record);
    }
    return result;
}

#define RAGNET_INSTANTIATE(T)                                                                                   \
    template EvalResult evaluate<T>(const GatModel<T>&, std::span<const RagGraph>, int);                        \
    template TrainResult<T> train<T>(const GatModelConfig&, std::span<const RagGraph>, const TrainConfig&,      \
                                     const TrainHooks&);                                                        \
    template TrainResult<T> train<T>(const GatModelConfig&, std::span<const RagGraph>, std::span<const RagGraph>, \
                                     const TrainConfig&, const TrainHooks&);

RAGNET_INSTANTIATE(float)
RAGNET_INSTANTIATE(double)

#undef RAGNET_INSTANTIATE

}  // namespace ragnet
