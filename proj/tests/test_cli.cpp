#include <doctest.h>

#include <sstream>

#include "cgm/cli.hpp"
#include "cgm/io.hpp"
#include "temp_dir.hpp"

using namespace cgm;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "cgm-tool");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  const auto b = io::read_file(p);
  return {b.begin(), b.end()};
}

}  // namespace

TEST_CASE("exit codes") {
  test::TempDir dir;
  CHECK(run({}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"--help"}).code == 0);
  const auto v = run({"--version"});
  CHECK(v.code == 0);
  CHECK(v.out.find(kToolVersion) != std::string::npos);
  CHECK(run({"make-model", "--arch", "nope", "--out", (dir.path() / "m.json").string()}).code == 2);
  CHECK(run({"gen", "--model", (dir.path() / "missing.json").string(), "--out-dir", dir.path().string()}).code == 1);
  CHECK(run({"gen", "--model", "x.json"}).code == 2);
  const auto short_flag = run({"-h"});
  CHECK(short_flag.code == 2);

  io::write_text(dir.path() / "broken.json", "{");
  const auto broken = run({"gen", "--model", (dir.path() / "broken.json").string(), "--out-dir", dir.path().string()});
  CHECK(broken.code == 2);
  CHECK(broken.err.find("error:") == 0);
}

TEST_CASE("make-model, gen and layer checks") {
  test::TempDir dir;
  const auto m = (dir.path() / "toy.json").string();
  REQUIRE(run({"make-model", "--arch", "toy_dag", "--out", m}).code == 0);
  CHECK(fs::exists(dir.path() / "toy.cgmb"));

  const auto yes = run({"check-layer", "--model", m, "--vars", "V2,V3"});
  CHECK(yes.code == 0);
  CHECK(yes.out.find(": yes") != std::string::npos);
  const auto no = run({"check-layer", "--model", m, "--vars", "V2"});
  CHECK(no.out.find(": no") != std::string::npos);
  CHECK(no.out.find("unblocked path") != std::string::npos);
  const auto anc = run({"check-ancestors", "--model", m, "--vars", "V3"});
  CHECK(anc.code == 0);
  CHECK(anc.out.find("latent ancestors of 1 variables") != std::string::npos);
  CHECK(run({"check-layer", "--model", m, "--vars", "V9"}).code == 2);

  const auto out = dir.path() / "gen";
  REQUIRE(run({"--seed", "4", "gen", "--model", m, "--out-dir", out.string(), "--n", "5"}).code == 0);
  const auto lat = io::read_csv(out / "latents.csv");
  CHECK(lat.rows.size() == 5);
  CHECK(lat.header == std::vector<std::string>{"sample", "z0", "z1"});
  CHECK(lat.provenance.find("seed=4") != std::string::npos);
  CHECK(io::read_png(out / "samples.png").width > 0);
}

TEST_CASE("planted pipeline end to end") {
  test::TempDir dir;
  const auto d = dir.path();
  const auto m = (d / "planted.json").string();
  REQUIRE(run({"--seed", "1", "make-model", "--arch", "planted", "--channels", "8", "--out", m}).code == 0);
  const auto part = io::read_csv(d / "planted.partition.csv");
  CHECK(part.header == std::vector<std::string>{"channel", "cluster"});
  CHECK(part.rows.size() == 24);

  const auto hyb = run({"--seed", "2", "hybrid", "--model", m, "--layer", "conv1", "--module", "cluster:2", "--clusters",
                        (d / "planted.partition.csv").string(), "--pairs", "3", "--out-dir", (d / "hyb").string()});
  REQUIRE(hyb.code == 0);
  CHECK(hyb.out.find("3/3 pairs bit-exact") != std::string::npos);
  const auto hcsv = io::read_csv(d / "hyb" / "hybrid.csv");
  for (const auto& row : hcsv.rows) CHECK(row[hcsv.column("mixed_latent_bit_exact")] == "1");

  const std::vector<std::string> eim{"--seed", "3", "--workers", "2", "eim", "--model", m, "--layer", "conv1",
                                     "--pairs", "16", "--out-dir", (d / "eim").string()};
  REQUIRE(run(eim).code == 0);
  const auto eims = io::read_eims(d / "eim" / "eims.eims");
  CHECK(eims.rows() == 24);
  CHECK(eims.n_pairs == 16);
  CHECK(eims.seed == 3);
  const auto first = slurp(d / "eim" / "eims.eims");
  const auto first_csv = slurp(d / "eim" / "influence.csv");

  // Reruns reproduce the bytes, also with another worker count.
  auto eim4 = eim;
  eim4[3] = "4";
  REQUIRE(run(eim).code == 0);
  CHECK(slurp(d / "eim" / "eims.eims") == first);
  CHECK(slurp(d / "eim" / "influence.csv") == first_csv);
  REQUIRE(run(eim4).code == 0);
  CHECK(slurp(d / "eim" / "eims.eims") == first);

  const auto eims_path = (d / "eim" / "eims.eims").string();
  REQUIRE(run({"cluster", "--eims", eims_path, "--k", "3", "--out-dir", (d / "clu").string()}).code == 0);
  const auto clusters = io::read_csv(d / "clu" / "clusters.csv");
  CHECK(clusters.rows.size() == 24);
  for (const auto& row : clusters.rows) {
    const int c = std::stoi(row[1]);
    CHECK((c >= 1 && c <= 3));
  }
  CHECK(io::read_eims(d / "clu" / "templates.eims").rows() == 3);

  const auto st = (d / "stab.csv").string();
  REQUIRE(run({"stability", "--eims", eims_path, "--k", "2..3", "--reps", "2", "--method", "both", "--out", st}).code == 0);
  const auto stab = io::read_csv(st);
  CHECK(stab.header == std::vector<std::string>{"method", "k", "consistency_mean", "consistency_std", "cosine_mean",
                                                "cosine_std", "repetitions"});
  CHECK(stab.rows.size() == 4);
  const auto stab_bytes = slurp(st);
  REQUIRE(run({"stability", "--eims", eims_path, "--k", "2..3", "--reps", "2", "--method", "both", "--out", st}).code == 0);
  CHECK(slurp(st) == stab_bytes);

  REQUIRE(run({"influence-stats", "--model", m, "--layer", "conv1", "--clusters", (d / "planted.partition.csv").string(),
               "--pairs", "8", "--nested", "--out-dir", (d / "ist").string()})
              .code == 0);
  const auto mods = io::read_csv(d / "ist" / "modules.csv");
  CHECK(mods.header == std::vector<std::string>{"module", "cluster", "channels", "individual_influence"});
  CHECK(mods.rows.size() == 24);
  const auto reg = io::read_csv(d / "ist" / "regression.csv");
  CHECK(reg.header == std::vector<std::string>{"slope", "intercept", "r2", "n"});
}

TEST_CASE("config file supplies defaults and flags override it") {
  test::TempDir dir;
  const auto m = (dir.path() / "toy.json").string();
  REQUIRE(run({"make-model", "--arch", "toy_linear", "--out", m}).code == 0);
  const auto cfg = dir.path() / "run.toml";
  io::write_text(cfg, "seed = 11\n\n[gen]\nn = 3\n");
  const auto out = dir.path() / "g";
  REQUIRE(run({"--config", cfg.string(), "gen", "--model", m, "--out-dir", out.string()}).code == 0);
  auto lat = io::read_csv(out / "latents.csv");
  CHECK(lat.rows.size() == 3);
  CHECK(lat.provenance.find("seed=11") != std::string::npos);

  REQUIRE(run({"--config", cfg.string(), "--seed", "12", "gen", "--model", m, "--out-dir", out.string(), "--n", "2"})
              .code == 0);
  lat = io::read_csv(out / "latents.csv");
  CHECK(lat.rows.size() == 2);
  CHECK(lat.provenance.find("seed=12") != std::string::npos);
}
