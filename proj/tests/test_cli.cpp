#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <sys/wait.h>

namespace {

namespace fs = std::filesystem;

const std::string kCli = MAIVART_CLI_PATH;

fs::path fresh_dir(const std::string& tag) {
    const fs::path p = fs::temp_directory_path() / ("maivart_cli_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

struct CmdResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

CmdResult run_cli(const std::string& args, const fs::path& workdir) {
    const fs::path out_file = fs::temp_directory_path() / "maivart_cli_stdout.txt";
    const fs::path err_file = fs::temp_directory_path() / "maivart_cli_stderr.txt";
    const std::string cmd = "cd \"" + workdir.string() + "\" && \"" + kCli + "\" " + args +
                            " >\"" + out_file.string() + "\" 2>\"" + err_file.string() + "\"";
    const int raw = std::system(cmd.c_str());
    CmdResult r;
    r.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.out = slurp(out_file);
    r.err = slurp(err_file);
    return r;
}

std::size_t count_files(const fs::path& dir) {
    if (!fs::exists(dir)) return 0;
    std::size_t n = 0;
    for (const auto& e : fs::directory_iterator(dir)) {
        (void)e;
        ++n;
    }
    return n;
}

// Shared fixture corpus: synthesized once, reused by the extract/train/eval
// tests below. 2 classes x 8 samples trains past the overfit bar quickly.
class CliTest : public ::testing::Test {
protected:
    static fs::path dir_;

    static void SetUpTestSuite() {
        dir_ = fresh_dir("suite");
        CmdResult r = run_cli("synth --out data --classes 2 --per-class 8 --seed 33", dir_);
        ASSERT_EQ(r.exit_code, 0) << r.err;
        spit(dir_ / "model.json",
             R"({"layers": 2, "d": 32, "heads": 2, "num_classes": 2})");
        spit(dir_ / "train.json", R"({"max_epochs": 60, "seed": 13})");
        r = run_cli("train --manifest data/manifest.jsonl --model-config model.json"
                    " --train-config train.json --out run",
                    dir_);
        ASSERT_EQ(r.exit_code, 0) << r.err;
    }

    static void TearDownTestSuite() { fs::remove_all(dir_); }
};

fs::path CliTest::dir_;

TEST(CliBasicsTest, HelpExitsZeroAndBadUsageExitsThree) {
    const fs::path dir = fresh_dir("basics");
    EXPECT_EQ(run_cli("--help", dir).exit_code, 0);
    EXPECT_EQ(run_cli("extract --help", dir).exit_code, 0);
    EXPECT_EQ(run_cli("", dir).exit_code, 3);  // a subcommand is required
    EXPECT_EQ(run_cli("extract --no-such-flag x --out y", dir).exit_code, 3);
    EXPECT_EQ(run_cli("frobnicate", dir).exit_code, 3);
}

TEST(CliBasicsTest, EveryRunPrintsItsResolvedConfig) {
    const fs::path dir = fresh_dir("resolved");
    CmdResult r = run_cli("flops --seq-lens 16,32", dir);
    ASSERT_EQ(r.exit_code, 0);
    EXPECT_NE(r.err.find("resolved config (flops)"), std::string::npos);
}

TEST(CliBasicsTest, SynthIsSeedDeterministic) {
    const fs::path dir = fresh_dir("synthseed");
    ASSERT_EQ(run_cli("synth --out a --classes 2 --per-class 2 --seed 5", dir).exit_code, 0);
    ASSERT_EQ(run_cli("synth --out b --classes 2 --per-class 2 --seed 5", dir).exit_code, 0);
    ASSERT_EQ(run_cli("synth --out c --classes 2 --per-class 2 --seed 6", dir).exit_code, 0);
    EXPECT_EQ(slurp(dir / "a/manifest.jsonl"), slurp(dir / "b/manifest.jsonl"));
    EXPECT_EQ(slurp(dir / "a/audio/c0_s0.wav"), slurp(dir / "b/audio/c0_s0.wav"));
    EXPECT_NE(slurp(dir / "a/audio/c0_s0.wav"), slurp(dir / "c/audio/c0_s0.wav"));
}

TEST_F(CliTest, ExtractWritesSixKindsByDefaultAndOneOnRequest) {
    CmdResult r = run_cli("extract --audio data/audio/c0_s0.wav --out imgs", dir_);
    ASSERT_EQ(r.exit_code, 0) << r.err;
    EXPECT_EQ(count_files(dir_ / "imgs"), 6u);
    EXPECT_TRUE(fs::exists(dir_ / "imgs/c0_s0.chroma.png"));

    r = run_cli("extract --audio data/audio/c0_s0.wav --out one --kinds chroma", dir_);
    ASSERT_EQ(r.exit_code, 0) << r.err;
    EXPECT_EQ(count_files(dir_ / "one"), 1u);

    EXPECT_EQ(run_cli("extract --audio data/audio/c0_s0.wav --out x --kinds nope", dir_)
                  .exit_code,
              3);
}

TEST_F(CliTest, ExtractAcceptsAWholeManifest) {
    CmdResult r = run_cli("extract --manifest data/manifest.jsonl --out bulk --kinds mfcc,chroma",
                          dir_);
    ASSERT_EQ(r.exit_code, 0) << r.err;
    EXPECT_EQ(count_files(dir_ / "bulk"), 32u);  // 16 samples x 2 kinds
    EXPECT_TRUE(fs::exists(dir_ / "bulk/c1_s7.mfcc.png"));
}

TEST_F(CliTest, ExtractRerunIsByteIdentical) {
    ASSERT_EQ(run_cli("extract --audio data/audio/c1_s0.wav --out r1", dir_).exit_code, 0);
    ASSERT_EQ(run_cli("extract --audio data/audio/c1_s0.wav --out r2", dir_).exit_code, 0);
    std::size_t compared = 0;
    for (const auto& e : fs::directory_iterator(dir_ / "r1")) {
        const std::string a = slurp(e.path());
        const std::string b = slurp(dir_ / "r2" / e.path().filename());
        EXPECT_EQ(a, b) << e.path().filename();
        EXPECT_FALSE(a.empty());
        ++compared;
    }
    EXPECT_EQ(compared, 6u);
}

TEST_F(CliTest, ExtractFailuresWriteNothing) {
    CmdResult r = run_cli("extract --audio data/audio/ghost.wav --out ghost_out", dir_);
    EXPECT_EQ(r.exit_code, 2);
    EXPECT_FALSE(fs::exists(dir_ / "ghost_out"));

    // Neither input mode nor both at once is a usable request.
    EXPECT_EQ(run_cli("extract --out x", dir_).exit_code, 3);
    EXPECT_EQ(run_cli("extract --audio a.wav --manifest m.jsonl --out x", dir_).exit_code, 3);
}

TEST_F(CliTest, TrainedEvalOnTheTrainSplitPrintsPerfectAccuracy) {
    CmdResult r = run_cli("eval --manifest data/manifest.jsonl --checkpoint run/checkpoint.bin"
                          " --out eval_out",
                          dir_);
    ASSERT_EQ(r.exit_code, 0) << r.err;
    EXPECT_EQ(r.out, "1.000000\n");

    // Confusion rows sum to the per-class sample counts.
    std::istringstream confusion(slurp(dir_ / "eval_out/confusion.csv"));
    std::string line;
    std::size_t rows = 0, total = 0;
    while (std::getline(confusion, line)) {
        std::size_t row_sum = 0;
        std::istringstream cells(line);
        std::string cell;
        while (std::getline(cells, cell, ',')) row_sum += std::stoul(cell);
        EXPECT_EQ(row_sum, 8u);
        total += row_sum;
        ++rows;
    }
    EXPECT_EQ(rows, 2u);
    EXPECT_EQ(total, 16u);
}

TEST_F(CliTest, TrainFillsInTheDefaultLearningRate) {
    // lr0 left out of the config: the metrics log shows the 0.001 default.
    const std::string metrics = slurp(dir_ / "run/metrics.csv");
    ASSERT_FALSE(metrics.empty());
    EXPECT_EQ(metrics.substr(0, metrics.find('\n')), "epoch,lr,train_loss,eval_accuracy");
    EXPECT_NE(metrics.find("\n0,0.001,"), std::string::npos);
}

TEST_F(CliTest, EvalClassMismatchExitsThreeWithNoPartialOutput) {
    ASSERT_EQ(run_cli("synth --out data3 --classes 3 --per-class 2 --seed 9", dir_).exit_code, 0);
    CmdResult r = run_cli("eval --manifest data3/manifest.jsonl --checkpoint run/checkpoint.bin"
                          " --out mismatch_out",
                          dir_);
    EXPECT_EQ(r.exit_code, 3);
    EXPECT_FALSE(fs::exists(dir_ / "mismatch_out/confusion.csv"));
}

TEST_F(CliTest, ResumeAfterCompletionAddsNothing) {
    const std::string before = slurp(dir_ / "run/metrics.csv");
    CmdResult r = run_cli("train --manifest data/manifest.jsonl --out run"
                          " --resume run/checkpoint.bin",
                          dir_);
    ASSERT_EQ(r.exit_code, 0) << r.err;
    EXPECT_EQ(slurp(dir_ / "run/metrics.csv"), before);

    // Resume carries its configs in the checkpoint; passing one again is an error.
    r = run_cli("train --manifest data/manifest.jsonl --out run"
                " --resume run/checkpoint.bin --model-config model.json",
                dir_);
    EXPECT_EQ(r.exit_code, 3);
}

TEST_F(CliTest, AttentionMatrixIsRowStochasticAndDeterministic) {
    CmdResult r = run_cli("attention --checkpoint run/checkpoint.bin"
                          " --input data/audio/c0_s1.wav --layer 1 --head 1 --out attn1",
                          dir_);
    ASSERT_EQ(r.exit_code, 0) << r.err;
    EXPECT_TRUE(fs::exists(dir_ / "attn1/attention.png"));

    // Default geometry: 32x32 image in 8x8 patches -> 16 tokens + CLS.
    std::istringstream csv(slurp(dir_ / "attn1/attention.csv"));
    std::string line;
    std::size_t rows = 0;
    while (std::getline(csv, line)) {
        double sum = 0;
        std::size_t cols = 0;
        std::istringstream cells(line);
        std::string cell;
        while (std::getline(cells, cell, ',')) {
            sum += std::stod(cell);
            ++cols;
        }
        EXPECT_EQ(cols, 17u);
        EXPECT_NEAR(sum, 1.0, 1e-6);
        ++rows;
    }
    EXPECT_EQ(rows, 17u);

    ASSERT_EQ(run_cli("attention --checkpoint run/checkpoint.bin"
                      " --input data/audio/c0_s1.wav --layer 1 --head 1 --out attn2",
                      dir_)
                  .exit_code,
              0);
    EXPECT_EQ(slurp(dir_ / "attn1/attention.csv"), slurp(dir_ / "attn2/attention.csv"));
}

TEST_F(CliTest, AttentionRangeErrorsNameTheValidRange) {
    CmdResult r = run_cli("attention --checkpoint run/checkpoint.bin"
                          " --input data/audio/c0_s1.wav --layer 9 --out nope",
                          dir_);
    EXPECT_EQ(r.exit_code, 3);
    EXPECT_NE(r.err.find("[0,2)"), std::string::npos);
    EXPECT_FALSE(fs::exists(dir_ / "nope"));

    r = run_cli("attention --checkpoint run/checkpoint.bin"
                " --input data/audio/c0_s1.wav --head 9 --out nope",
                dir_);
    EXPECT_EQ(r.exit_code, 3);
    EXPECT_NE(r.err.find("[0,2)"), std::string::npos);
}

TEST(CliFlopsTest, RatiosAreExactAndExponentsFit) {
    const fs::path dir = fresh_dir("flops");
    CmdResult r = run_cli("flops --seq-lens 16,32,64,128", dir);
    ASSERT_EQ(r.exit_code, 0) << r.err;

    std::istringstream out(r.out);
    std::string line;
    std::getline(out, line);
    ASSERT_EQ(line, "n,attention_scores,attention_mix,attention_proj,mlp,total");
    std::vector<std::vector<double>> table;
    while (std::getline(out, line) && line.find("fitted") == std::string::npos) {
        std::vector<double> row;
        std::istringstream cells(line);
        std::string cell;
        while (std::getline(cells, cell, ',')) row.push_back(std::stod(cell));
        ASSERT_EQ(row.size(), 6u);
        table.push_back(row);
    }
    ASSERT_EQ(table.size(), 4u);
    EXPECT_EQ(table[1][1], 4 * table[0][1]);  // scores quadruple when n doubles
    EXPECT_EQ(table[1][2], 4 * table[0][2]);
    EXPECT_EQ(table[1][4], 2 * table[0][4]);  // mlp doubles

    double attention_exp = 0, mlp_exp = 0;
    ASSERT_EQ(std::sscanf(line.c_str(), "fitted exponent attention %lf", &attention_exp), 1);
    ASSERT_TRUE(std::getline(out, line));
    ASSERT_EQ(std::sscanf(line.c_str(), "fitted exponent mlp %lf", &mlp_exp), 1);
    EXPECT_GE(attention_exp, 1.9);
    EXPECT_LE(attention_exp, 2.1);
    EXPECT_GE(mlp_exp, 0.95);
    EXPECT_LE(mlp_exp, 1.05);

    EXPECT_EQ(run_cli("flops --seq-lens 16", dir).exit_code, 3);
}

TEST(CliConfigFileTest, ConfigFileKeysMirrorFlagsAndFlagsWin) {
    const fs::path dir = fresh_dir("cfgfile");
    spit(dir / "job.ini",
         "[synth]\nout = \"from_file\"\nclasses = 2\nper-class = 2\n");
    CmdResult r = run_cli("--config job.ini --seed 5 synth", dir);
    ASSERT_EQ(r.exit_code, 0) << r.err;
    EXPECT_TRUE(fs::exists(dir / "from_file/manifest.jsonl"));

    // The same run driven by flags produces the same bytes; a flag overrides
    // the file's value for out.
    ASSERT_EQ(run_cli("synth --out from_flags --classes 2 --per-class 2 --seed 5", dir).exit_code,
              0);
    EXPECT_EQ(slurp(dir / "from_file/manifest.jsonl"), slurp(dir / "from_flags/manifest.jsonl"));
    ASSERT_EQ(run_cli("--config job.ini --seed 5 synth --out override", dir).exit_code, 0);
    EXPECT_TRUE(fs::exists(dir / "override/manifest.jsonl"));
}

}  // namespace
