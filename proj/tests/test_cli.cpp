#include <doctest.h>
#include <json.hpp>

#include <sys/wait.h>

#include <cstdio>
#include <fstream>

#include "ragnet/dataio.hpp"
#include "ragnet/fileio.hpp"
#include "ragnet/gat.hpp"
#include "ragnet/graph.hpp"
#include "ragnet/segmentation.hpp"
#include "support.hpp"

using namespace ragnet;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string output;
};

Run ragnet_cli(const std::string& args) {
    const std::string cmd = std::string(RAGNET_CLI) + " " + args + " 2>&1";
    Run r;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) r.output.append(buf, n);
    const int status = ::pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

// A tiny MNIST-shaped dataset on disk: class c has its bright block in a
// class-dependent cell of a 4x3 grid.
void write_fake_mnist(const fs::path& dir, int n_train, int n_test) {
    Rng rng(17);
    for (auto [split, n] : {std::pair{Split::Train, n_train}, std::pair{Split::Test, n_test}}) {
        LabeledDataset ds;
        for (int i = 0; i < n; ++i) {
            const int label = i % 10;
            Image img;
            img.width = img.height = 28;
            img.data.assign(28 * 28, 0.0f);
            const int x0 = (label % 4) * 7, y0 = (label / 4) * 9;
            for (int y = y0; y < y0 + 8; ++y) {
                for (int x = x0; x < x0 + 7; ++x) img.at(x, y) = static_cast<float>(0.7 + 0.3 * rng.uniform01());
            }
            ds.images.push_back(img);
            ds.labels.push_back(label);
        }
        const auto [images, labels] = encode_idx(ds);
        const std::string prefix = split == Split::Train ? "train" : "t10k";
        write_file_atomic(dir / (prefix + "-images-idx3-ubyte"), images);
        write_file_atomic(dir / (prefix + "-labels-idx1-ubyte"), labels);
    }
}

}  // namespace

TEST_CASE("cli: usage errors exit with 1") {
    CHECK(ragnet_cli("").code == 1);
    CHECK(ragnet_cli("frobnicate").code == 1);
    CHECK(ragnet_cli("train --epochs notanumber").code == 1);
    CHECK(ragnet_cli("segment --split sideways").code == 1);
    CHECK(ragnet_cli("eval").code == 1);
    CHECK(ragnet_cli("--help").code == 0);
}

TEST_CASE("cli: missing input files exit with 2") {
    const auto r = ragnet_cli("eval --checkpoint /nonexistent/model.ckpt --graphs /nonexistent/test.rag");
    CHECK(r.code == 2);
    CHECK(r.output.find("/nonexistent/model.ckpt") != std::string::npos);
    CHECK(ragnet_cli("segment --image /nonexistent/x.ppm --out /tmp").code == 2);
    CHECK(ragnet_cli("train --graphs /nonexistent/train.rag --epochs 1").code == 2);
}

TEST_CASE("cli: parameter counts from configs and flags") {
    const std::string cfg = std::string(RAGNET_CONFIG_DIR);
    const auto cifar = ragnet_cli("train --config " + cfg + "/cifar10-2head.toml --params-only");
    CHECK(cifar.code == 0);
    CHECK(cifar.output == "55364\n");
    const auto mnist = ragnet_cli("train --config " + cfg + "/mnist-1head.toml --params-only");
    CHECK(mnist.code == 0);
    CHECK(std::stoll(mnist.output) == count_parameters(GatModelConfig{}));
    CHECK(ragnet_cli("train --config " + cfg + "/cifar10-2head.toml --heads 1 --params-only").output !=
          cifar.output);
}

TEST_CASE("cli: single-image segmentation with one superpixel") {
    testing::TempDir dir("cli-image");
    Rng rng(3);
    const auto img = testing::blocky_image(rng, 23, 17, 3, 4);
    write_file_atomic(dir / "x.ppm", encode_ppm(to_rgb8(img)));
    const auto r = ragnet_cli("segment --image " + q(dir / "x.ppm") + " --target-k 1 --out " + q(dir.path()));
    REQUIRE(r.code == 0);
    const auto segs = decode_segmentations(read_file(dir / "x.seg"));
    REQUIRE(segs.size() == 1);
    CHECK(segs[0].n_segments == 1);
    CHECK(segs[0].width == 23);
    CHECK(segs[0].height == 17);
    const auto png = read_file(dir / "x.png");
    REQUIRE(png.size() > 24);
    CHECK(png[19] == 23);
    CHECK(png[23] == 17);

    const auto b = ragnet_cli("build-graphs --image " + q(dir / "x.ppm") + " --segments " + q(dir / "x.seg") +
                              " --format json --out " + q(dir.path()));
    REQUIRE(b.code == 0);
    const auto g = import_graph(dir / "x.json");
    CHECK(g.n_nodes == 1);
    CHECK(g.feature_dim == 5);
}

TEST_CASE("cli: segment, build, train and eval on a small dataset") {
    testing::TempDir data("cli-data");
    testing::TempDir out("cli-out");
    write_fake_mnist(data.path(), 60, 20);
    const std::string common = " --dataset mnist --data-dir " + q(data.path()) + " --out " + q(out.path());

    REQUIRE(ragnet_cli("segment --target-k 20 --overlays 2" + common).code == 0);
    CHECK(fs::exists(out / "train.seg"));
    CHECK(fs::exists(out / "test.seg"));
    CHECK(fs::exists(out.path() / "overlays" / "train-0.png"));
    CHECK(decode_segmentations(read_file(out / "train.seg")).size() == 60);

    REQUIRE(ragnet_cli("build-graphs" + common).code == 0);
    const auto first = read_file(out / "train.rag");
    REQUIRE(ragnet_cli("build-graphs --jobs 2" + common).code == 0);
    CHECK(read_file(out / "train.rag") == first);
    const auto graphs = import_graphs(out / "train.rag");
    CHECK(graphs.size() == 60);
    CHECK(graphs[7].label == 7);

    const fs::path run = out.path() / "run";
    const auto t = ragnet_cli("train --graphs " + q(out.path()) + " --epochs 3 --batch-size 8 --quiet --seed 1 --out " +
                              q(run));
    REQUIRE(t.code == 0);
    CHECK(fs::exists(run / "model.ckpt"));
    CHECK(fs::exists(run / "train_log.csv"));
    const auto report = nlohmann::json::parse(std::ifstream(run / "report.json"));
    CHECK(report["epochs"].size() == 3);
    CHECK(report["test_accuracy"].is_number());

    const auto e = ragnet_cli("eval --checkpoint " + q(run / "model.ckpt") + " --graphs " + q(out / "test.rag") +
                              " --out " + q(out.path() / "eval"));
    REQUIRE(e.code == 0);
    CHECK(e.output.find("accuracy") != std::string::npos);
    const auto ev = nlohmann::json::parse(std::ifstream(out.path() / "eval" / "eval.json"));
    CHECK(ev["accuracy"].get<double>() == doctest::Approx(report["test_accuracy"].get<double>()));
    CHECK(fs::exists(out.path() / "eval" / "confusion.csv"));
    CHECK(fs::exists(out.path() / "eval" / "probabilities.csv"));

    // Same seed, byte-identical checkpoint.
    const fs::path run2 = out.path() / "run2";
    REQUIRE(ragnet_cli("train --graphs " + q(out.path()) + " --epochs 3 --batch-size 8 --quiet --seed 1 --out " +
                       q(run2)).code == 0);
    CHECK(read_file(run2 / "model.ckpt") == read_file(run / "model.ckpt"));
}

TEST_CASE("cli: feature-dim mismatch in eval exits with 3") {
    testing::TempDir dir("cli-mismatch");
    Rng rng(5);
    std::vector<RagGraph> rgb;
    for (int i = 0; i < 4; ++i) rgb.push_back(testing::random_graph(rng, 5, 5, 0.4));
    export_graphs(rgb, dir / "rgb.rag");
    GatModelConfig cfg;  // feature dim 3
    save_checkpoint(GatModel<float>::init(cfg, 1), dir / "gray.ckpt");
    const auto r = ragnet_cli("eval --checkpoint " + q(dir / "gray.ckpt") + " --graphs " + q(dir / "rgb.rag"));
    CHECK(r.code == 3);
    CHECK(r.output.find("3") != std::string::npos);
    CHECK(r.output.find("5") != std::string::npos);

    write_file_atomic(dir / "junk.ckpt", std::string_view("not a checkpoint at all"));
    CHECK(ragnet_cli("eval --checkpoint " + q(dir / "junk.ckpt") + " --graphs " + q(dir / "rgb.rag")).code == 3);
}
