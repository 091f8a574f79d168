#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

fs::path workdir()
{
    static const fs::path dir = [] {
        auto p = fs::current_path() / "oohsim-test-cli";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return dir;
}

int oohsim(const std::string& args, const std::string& env = "")
{
    const std::string cmd = env + (env.empty() ? "" : " ") + "'" + OOHSIM_CLI_PATH + "' " +
                            args + " > '" + (workdir() / "stdout.txt").string() + "' 2> '" +
                            (workdir() / "stderr.txt").string() + "'";
    const int status = std::system(cmd.c_str());
    REQUIRE(WIFEXITED(status));
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path config(const std::string& name, const std::string& text)
{
    const auto p = workdir() / name;
    std::ofstream(p) << text;
    return p;
}

std::size_t lines(const std::string& s)
{
    return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

const char* kValid = R"({
    "techniques": ["proc", "epml"],
    "memory_sizes": ["1MB"],
    "output": {"formats": ["csv", "json", "plotdata"]}
})";

}  // namespace

TEST_SUITE("cli")
{
    TEST_CASE("help succeeds and a missing subcommand is a usage error")
    {
        CHECK(oohsim("--help") == 0);
        CHECK(oohsim("") == 2);
        CHECK(oohsim("frobnicate") == 2);
    }

    TEST_CASE("run writes reports for a valid config")
    {
        const auto out = workdir() / "run";
        CHECK(oohsim("run --config '" + config("ok.json", kValid).string() + "' --out '" +
                     out.string() + "'") == 0);
        CHECK(lines(slurp(out / "report.csv")) == 3);
        CHECK(fs::exists(out / "report.json"));
        CHECK(fs::exists(out / "plotdata.txt"));
    }

    TEST_CASE("the same seed gives the same CSV")
    {
        const auto cfg = config("ok.json", kValid).string();
        REQUIRE(oohsim("run --config '" + cfg + "' --seed 3 --out '" +
                       (workdir() / "a").string() + "'") == 0);
        REQUIRE(oohsim("run --config '" + cfg + "' --seed 3 --out '" +
                       (workdir() / "b").string() + "'") == 0);
        CHECK(slurp(workdir() / "a" / "report.csv") == slurp(workdir() / "b" / "report.csv"));
    }

    TEST_CASE("malformed configs exit with 2")
    {
        CHECK(oohsim("run --config '" + config("bad.json", "{oops").string() + "'") == 2);
        CHECK(oohsim("run --config '" +
                     config("unknown.json", R"({"techniques": ["proc"], "x": 1})").string() +
                     "'") == 2);
        CHECK(slurp(workdir() / "stderr.txt").find("x: unknown key") != std::string::npos);
        CHECK(oohsim("run --config '" + (workdir() / "absent.json").string() + "'") == 2);
        CHECK(oohsim("run") == 2);
    }

    TEST_CASE("an unwritable output directory exits with 3")
    {
        CHECK(oohsim("run --config '" + config("ok.json", kValid).string() +
                     "' --out /proc/oohsim-denied") == 3);
        CHECK(oohsim("sweep --sizes 1MB --techniques epml --out /proc/oohsim-denied") == 3);
    }

    TEST_CASE("sweep covers the cross product")
    {
        const auto out = workdir() / "sweep";
        CHECK(oohsim("sweep --sizes 1MB,10MB --techniques proc,uffd,spml,epml --out '" +
                     out.string() + "'") == 0);
        CHECK(lines(slurp(out / "report.csv")) == 9);
        CHECK(oohsim("sweep --sizes 1MB --techniques epml --out '" + out.string() + "'") == 0);
        CHECK(lines(slurp(out / "report.csv")) == 2);
        CHECK(oohsim("sweep --sizes 1MB --techniques '' --out '" + out.string() + "'") == 2);
        CHECK(oohsim("sweep --sizes 1MB --techniques warp --out '" + out.string() + "'") == 2);
    }

    TEST_CASE("report converts a JSON report to the other formats")
    {
        const auto src = workdir() / "run";
        REQUIRE(oohsim("run --config '" + config("ok.json", kValid).string() + "' --out '" +
                       src.string() + "'") == 0);
        const auto out = workdir() / "converted";
        CHECK(oohsim("report --input '" + (src / "report.json").string() + "' --out '" +
                     out.string() + "' --formats csv") == 0);
        CHECK(slurp(out / "report.csv") == slurp(src / "report.csv"));
        CHECK(oohsim("report --input '" + (workdir() / "none.json").string() + "'") == 3);
    }

    TEST_CASE("calibrate prints a table that loads back")
    {
        const auto cal = workdir() / "cal.txt";
        CHECK(oohsim("calibrate --out '" + cal.string() + "'") == 0);
        CHECK(oohsim("calibrate --file '" + cal.string() + "'") == 0);
        CHECK(slurp(workdir() / "stdout.txt") == slurp(cal));
        const auto bad = config("bad-cal.txt", "M8 = nope\n");
        CHECK(oohsim("calibrate --file '" + bad.string() + "'") == 2);
        CHECK(oohsim("sweep --sizes 1MB --techniques epml --out '" +
                         (workdir() / "env").string() + "'",
                     "OOHSIM_CALIBRATION='" + bad.string() + "'") == 2);
    }

    TEST_CASE("repro writes the comparison grid")
    {
        const auto out = workdir() / "repro";
        CHECK(oohsim("repro --figure fig9 --out '" + out.string() + "'") == 0);
        const std::string csv = slurp(out / "fig9.csv");
        CHECK(csv.rfind("figure,series,x,reference,simulated,rel_error\n", 0) == 0);
        CHECK(lines(csv) == 13);
        CHECK(oohsim("repro --figure fig42 --out '" + out.string() + "'") == 2);
        CHECK(slurp(workdir() / "stderr.txt").find("unknown figure") != std::string::npos);
    }
}
