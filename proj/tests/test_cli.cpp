#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string output;
};

fs::path scratch() {
    static const fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / ("uqadv_cli_test_" + std::to_string(::getpid()));
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

Result run(const std::string& args) {
    const char* exe = std::getenv("UQADV_CLI");
    REQUIRE_MESSAGE(exe != nullptr, "UQADV_CLI must point at the command-line binary");
    const fs::path log = scratch() / "last.log";
    const std::string cmd = std::string("\"") + exe + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.output = slurp(log);
    return r;
}

}  // namespace

TEST_CASE("gen-data is byte-for-byte reproducible") {
    const fs::path a = scratch() / "a.mman", b = scratch() / "b.mman";
    REQUIRE(run("gen-data --n 50 --seed 3 --out " + a.string()).code == 0);
    REQUIRE(run("gen-data --n 50 --seed 3 --out " + b.string()).code == 0);
    CHECK(slurp(a) == slurp(b));
    CHECK(slurp(a).substr(0, 4) == "MMAN");
    REQUIRE(run("gen-data --n 50 --seed 4 --out " + b.string()).code == 0);
    CHECK(slurp(a) != slurp(b));
}

TEST_CASE("missing training data is a usage error") {
    const Result r = run("train --method hmc --out " + (scratch() / "m.uqad").string());
    CHECK(r.code == 1);
    CHECK(r.output.find("--data") != std::string::npos);
}

TEST_CASE("every command has help") {
    for (const char* cmd : {"", "gen-data", "train", "attack", "eval", "run"}) {
        const Result r = run(std::string(cmd) + " --help");
        CAPTURE(cmd);
        CHECK(r.code == 0);
        CHECK(r.output.find("--") != std::string::npos);
    }
}

TEST_CASE("bad configuration is rejected with exit code 1") {
    const fs::path cfg = scratch() / "bad.cfg";
    std::ofstream(cfg) << "seed = 1\nnot.a.key = 3\n";
    const Result r = run("run --experiment fig2_density_vs_step --config " + cfg.string() + " --out " +
                         (scratch() / "bad").string());
    CHECK(r.code == 1);
    CHECK(r.output.find("not.a.key") != std::string::npos);

    const Result unknown = run("run --experiment nope --out " + (scratch() / "nope").string());
    CHECK(unknown.code != 0);
    CHECK(unknown.output.find("table1_hmc_vs_det") != std::string::npos);

    CHECK(run("frobnicate").code == 1);
}

TEST_CASE("print-config echoes overrides") {
    const Result r = run("run --set hmc.samples=7 --print-config");
    CHECK(r.code == 0);
    CHECK(r.output.find("hmc.samples = 7") != std::string::npos);
}

TEST_CASE("train, attack and eval on a tiny problem") {
    const fs::path data = scratch() / "t.mman", model = scratch() / "t.uqad", out = scratch() / "attack.csv";
    const std::string small = " --set data.dim=8 --set train.epochs=5";
    REQUIRE(run("gen-data --n 60 --seed 1 --out " + data.string() + small).code == 0);
    REQUIRE(run("train --method map --data " + data.string() + " --out " + model.string() + small).code == 0);
    const Result a = run("attack --method fgm --model " + model.string() + " --data " + data.string() +
                         " --eps 0.1 --count 3 --out " + out.string() + small);
    CHECK(a.code == 0);
    CHECK(slurp(out).find("step,linf_norm") != std::string::npos);
    const Result e = run("eval --report accuracy --model " + model.string() + " --data " + data.string() + small);
    CHECK(e.code == 0);
    CHECK(e.output.find("accuracy") != std::string::npos);
}

TEST_CASE("a reduced table 1 run writes its table") {
    const fs::path out = scratch() / "t1";
    const std::string sets =
        " --set data.n=200 --set data.test_n=60 --set data.dim=8 --set train.epochs=10"
        " --set hmc.burn_in=10 --set hmc.samples=10 --set hmc.thinning=1 --set attack.examples=10"
        " --set attack.repetitions=2 --set density.quad_resolution=200";
    const Result r = run("run --experiment table1_hmc_vs_det --out " + out.string() + sets);
    CHECK(r.code == 0);
    const std::string table = slurp(out / "table1_hmc_vs_det" / "table1.csv");
    CHECK(table.find("epsilon") != std::string::npos);
    CHECK(fs::exists(out / "table1_hmc_vs_det" / "summary.txt"));
}
