#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pyramid/commands.hpp"
#include "pyramid/config.hpp"
#include "pyramid/features.hpp"

using namespace pyramid;
namespace fs = std::filesystem;

namespace {

const char* kTinyConfig = R"({
  "seed": 5,
  "output_dir": "out",
  "pyramid": {"levels": 1, "base_input": 8, "shared_stage": {"kernel": 3, "channels": 4, "pool": 2},
              "unshared": [{"kernel": 2, "channels": 4, "pool": 1}], "output_dim": 4},
  "train": {"iterations_per_level": 12, "batch_size": 8, "eval_interval": 5, "validation_pairs": 40,
            "validation_fraction": 0.3},
  "data": {"synth": {"identities": 8, "images_per_identity": 4, "edge": 20}, "holdout_fraction": 0.25}
})";

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               (std::string("pyramid_cli_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    fs::path write(const std::string& name, const std::string& text) const {
        const fs::path p = dir_ / name;
        std::ofstream(p, std::ios::binary) << text;
        return p;
    }

    int run(const std::string& args) const {
        const std::string cmd = std::string(PYRCNN_EXE) + " " + args + " > " + (dir_ / "stdout.txt").string() +
                                " 2> " + (dir_ / "stderr.txt").string();
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }

    std::string slurp(const fs::path& p) const {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), {});
    }

    fs::path dir_;
};

std::size_t line_count(const std::string& text) {
    return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

}  // namespace

TEST_F(CliTest, ConfigRejectsUnknownKeysAndBadTargets) {
    EXPECT_THROW(parse_config(R"({"pyramid": {"levles": 2}})", dir_), ConfigError);
    EXPECT_THROW(parse_config(R"({"evaluation": {"fpr_targets": [1.0]}})", dir_), ConfigError);
    EXPECT_THROW(parse_config(R"({"train": {"learning_rate": "fast"}})", dir_), ConfigError);
    EXPECT_THROW(parse_config("{not json", dir_), ConfigError);
    EXPECT_THROW(parse_config(R"({"extraction": {"scheme": "middle"}})", dir_), ConfigError);
}

TEST_F(CliTest, ConfigDefaultsAndSeedFanOut) {
    RunConfig cfg = parse_config("{}", dir_);
    EXPECT_EQ(cfg.evaluation.fpr_targets, (std::vector<double>{0.1, 0.01, 0.001}));
    EXPECT_EQ(cfg.output_dir, dir_ / "out");
    EXPECT_EQ(cfg.index_path(), dir_ / "out" / "dataset" / "index.csv");
    const std::uint64_t train_seed = cfg.train.seed;
    cfg.set_seed(99);
    EXPECT_NE(cfg.train.seed, train_seed);
    EXPECT_EQ(cfg.train.seed, derive_seed(99, "train"));
}

TEST_F(CliTest, SynthWritesDeterministicDataset) {
    const fs::path cfg = write("c.json", kTinyConfig);
    ASSERT_EQ(run("synth --config " + cfg.string()), 0) << slurp(dir_ / "stderr.txt");
    const fs::path index = dir_ / "out" / "dataset" / "index.csv";
    ASSERT_TRUE(fs::exists(index));
    EXPECT_NE(slurp(dir_ / "stdout.txt").find("8 identities, 32 images"), std::string::npos);
    const std::string first_index = slurp(index);
    const std::string first_image = slurp(dir_ / "out" / "dataset" / "images" / "id3_2.pgm");
    fs::remove_all(dir_ / "out");
    ASSERT_EQ(run("synth --config " + cfg.string()), 0);
    EXPECT_EQ(slurp(index), first_index);
    EXPECT_EQ(slurp(dir_ / "out" / "dataset" / "images" / "id3_2.pgm"), first_image);
}

TEST_F(CliTest, SynthFailsWhenOutputCannotBeCreated) {
    write("blocker", "not a directory");
    std::string text = kTinyConfig;
    text.replace(text.find("\"out\""), 5, "\"blocker/out\"");
    const fs::path cfg = write("c.json", text);
    EXPECT_NE(run("synth --config " + cfg.string()), 0);
    EXPECT_FALSE(slurp(dir_ / "stderr.txt").empty());
}

TEST_F(CliTest, InvalidConfigExitsNonzeroWithMessage) {
    const fs::path cfg = write("c.json", R"({"pyramid": {"levels": 0}})");
    EXPECT_NE(run("synth --config " + cfg.string()), 0);
    EXPECT_NE(slurp(dir_ / "stderr.txt").find("level"), std::string::npos);
    EXPECT_NE(run("synth --config " + (dir_ / "missing.json").string()), 0);
}

TEST_F(CliTest, TrainExtractEvalPipeline) {
    const fs::path cfg = write("c.json", kTinyConfig);
    ASSERT_EQ(run("synth --config " + cfg.string()), 0);
    ASSERT_EQ(run("train --config " + cfg.string()), 0) << slurp(dir_ / "stderr.txt");
    const fs::path out = dir_ / "out";
    EXPECT_TRUE(fs::exists(out / "model.bin"));
    EXPECT_EQ(slurp(out / "model.bin").substr(0, 8), "PYRCNN01");
    EXPECT_TRUE(fs::exists(out / "trace_level0.csv"));
    EXPECT_FALSE(fs::exists(out / "trace_level1.csv"));
    const std::string trace = slurp(out / "trace_level0.csv");
    EXPECT_EQ(trace.rfind("iteration,mean_loss,val_auc\n", 0), 0u);
    EXPECT_EQ(line_count(trace), 1u + 12u);

    // Same seed reproduces the trace byte for byte; another seed does not.
    ASSERT_EQ(run("train --config " + cfg.string()), 0);
    EXPECT_EQ(slurp(out / "trace_level0.csv"), trace);
    ASSERT_EQ(run("train --config " + cfg.string() + " --seed 6"), 0);
    EXPECT_NE(slurp(out / "trace_level0.csv"), trace);
    ASSERT_EQ(run("train --config " + cfg.string()), 0);

    const fs::path eval_index = out / "eval_index.csv";
    const std::size_t records = load_index(eval_index).records.size();
    ASSERT_EQ(run("extract --config " + cfg.string() + " " + (out / "model.bin").string() + " " + eval_index.string()), 0)
        << slurp(dir_ / "stderr.txt");
    const std::string features = slurp(out / "features.csv");
    EXPECT_EQ(line_count(features), records + 1);
    std::istringstream rows(features);
    std::string line;
    std::getline(rows, line);
    std::getline(rows, line);
    EXPECT_NE(line.find(",4,"), std::string::npos);
    ASSERT_EQ(run("extract --config " + cfg.string() + " " + (out / "model.bin").string() + " " + eval_index.string()), 0);
    EXPECT_EQ(slurp(out / "features.csv"), features);

    ASSERT_EQ(run("eval --config " + cfg.string() + " " + (out / "features.csv").string() + " " + eval_index.string()), 0)
        << slurp(dir_ / "stderr.txt");
    const std::string report = slurp(out / "report.csv");
    for (const char* label : {"TPR@FPR=0.1,", "TPR@FPR=0.01,", "TPR@FPR=0.001,"}) {
        EXPECT_NE(report.find(label), std::string::npos) << label;
    }

    // The report is exactly what the library computes.
    const RunConfig rc = load_config(cfg);
    std::ostringstream direct;
    write_report_csv(direct, evaluate_features(rc, read_features_csv(out / "features.csv"), load_index(eval_index)));
    EXPECT_EQ(report, direct.str());
}

TEST_F(CliTest, TrainRejectsShapeProblemsBeforeTraining) {
    std::string text = kTinyConfig;
    text.replace(text.find("\"output_dim\": 4"), 15, "\"output_dim\": 4, \"image_edge\": 30");
    const fs::path cfg = write("c.json", text);
    ASSERT_EQ(run("synth --config " + cfg.string()), 0);
    EXPECT_NE(run("train --config " + cfg.string()), 0);
    EXPECT_NE(slurp(dir_ / "stderr.txt").find("smaller"), std::string::npos) << slurp(dir_ / "stderr.txt");
    EXPECT_FALSE(fs::exists(dir_ / "out" / "trace_level0.csv"));
    EXPECT_FALSE(fs::exists(dir_ / "out" / "model.bin"));
}

TEST_F(CliTest, ExtractRejectsSchemeMismatch) {
    const fs::path cfg = write("c.json", kTinyConfig);
    ASSERT_EQ(run("synth --config " + cfg.string()), 0);
    ASSERT_EQ(run("train --config " + cfg.string()), 0);
    std::string text = kTinyConfig;
    text.insert(text.rfind('}'), ", \"extraction\": {\"scheme\": \"landmark\"}");
    const fs::path lm = write("lm.json", text);
    EXPECT_NE(run("extract --config " + lm.string() + " " + (dir_ / "out" / "model.bin").string() + " " +
                  (dir_ / "out" / "eval_index.csv").string()),
              0);
    EXPECT_NE(slurp(dir_ / "stderr.txt").find("landmarks"), std::string::npos);
}

TEST_F(CliTest, LandmarkSchemeTrainsOnePyramidPerLandmark) {
    std::string text = kTinyConfig;
    text.replace(text.find("\"edge\": 20"), 10, "\"edge\": 48");
    text.insert(text.rfind('}'), ", \"extraction\": {\"scheme\": \"landmark\", \"normalize\": true}");
    const fs::path cfg = write("c.json", text);
    ASSERT_EQ(run("synth --config " + cfg.string()), 0);
    ASSERT_EQ(run("train --config " + cfg.string()), 0) << slurp(dir_ / "stderr.txt");
    const fs::path out = dir_ / "out";
    EXPECT_EQ(load_models(out / "model.bin").size(), 3u);
    EXPECT_TRUE(fs::exists(out / "trace_landmark2_level0.csv"));
    ASSERT_EQ(run("extract --config " + cfg.string() + " " + (out / "model.bin").string() + " " +
                  (out / "eval_index.csv").string()),
              0)
        << slurp(dir_ / "stderr.txt");
    const auto features = read_features_csv(out / "features.csv");
    for (const auto& [id, v] : features) {
        ASSERT_EQ(v.size(), 12u);
        double s = 0.0;
        for (double x : v) s += x * x;
        if (s > 0.0) {
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
    }
}

TEST_F(CliTest, EvalSeparableFeaturesAndMissingImages) {
    write("index.csv", "path,identity\na.pgm,p\nb.pgm,p\nc.pgm,q\nd.pgm,q\n");
    const auto key = [&](const char* n) { return image_key(dir_ / n); };
    std::ostringstream feats;
    feats << "image_path,dim,v1\n"
          << key("a.pgm") << ",1,0.0\n"
          << key("b.pgm") << ",1,0.1\n"
          << key("c.pgm") << ",1,10.0\n"
          << key("d.pgm") << ",1,10.1\n";
    write("features.csv", feats.str());
    const fs::path cfg = write("c.json", R"({"output_dir": "res"})");
    ASSERT_EQ(run("eval --config " + cfg.string() + " " + (dir_ / "features.csv").string() + " " +
                  (dir_ / "index.csv").string()),
              0)
        << slurp(dir_ / "stderr.txt");
    EXPECT_NE(slurp(dir_ / "res" / "report.csv").find("accuracy,1\n"), std::string::npos);

    write("index2.csv", "path,identity\na.pgm,p\nb.pgm,p\nc.pgm,q\ne.pgm,q\n");
    EXPECT_NE(run("eval --config " + cfg.string() + " " + (dir_ / "features.csv").string() + " " +
                  (dir_ / "index2.csv").string()),
              0);
    EXPECT_NE(slurp(dir_ / "stderr.txt").find("e.pgm"), std::string::npos);
}
