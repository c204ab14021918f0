#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"

#include <chrono>
#include <fstream>
#include <sstream>

#include "geca/cli.hpp"
#include "geca/image_io.hpp"

using namespace geca;
using namespace geca::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "geca_test_cli" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "geca");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Tiny model and schedule so every command runs in well under a second.
const std::vector<std::string> kTiny = {
    "--set", "model.cond_dim=16", "--set", "model.freq_dim=8",  "--set", "model.hidden=4",
    "--set", "train.T=10",        "--set", "train.updates=2",   "--set", "train.batch=2",
    "--set", "train.steps=6",     "--set", "train.checkpoint_every=3", "--set", "sample.updates=2",
    "--set", "toy.size=8",        "--set", "ablate.n=4",         "--set", "classify.epochs=2",
    "--set", "classify.repeats=1", "--set", "expand.batch=4"};

std::vector<std::string> with_tiny(std::vector<std::string> args) {
  args.insert(args.end(), kTiny.begin(), kTiny.end());
  return args;
}

// Toy dataset plus a trained tiny checkpoint, built once per process.
struct Trained {
  fs::path dir = scratch("trained");
  fs::path manifest;
  fs::path checkpoint;

  Trained() {
    const auto toy = run(with_tiny({"toy", "--out", (dir / "toy").string(), "--n", "12", "--seed", "3"}));
    REQUIRE(toy.code == 0);
    manifest = dir / "toy" / "manifest.csv";
    const auto tr = run(with_tiny({"train", "--manifest", manifest.string(), "--out", (dir / "run").string()}));
    REQUIRE_MESSAGE(tr.code == 0, tr.err);
    checkpoint = dir / "run" / "model.geca";
  }

  static const Trained& get() {
    static const Trained t;
    return t;
  }
};

}  // namespace

TEST_SUITE("checkpoint") {
  TEST_CASE("round trip is bitwise") {
    const auto c = small_theta_config(3);
    TrainState<float> st{random_theta<float>(c, 1), {}, 17, {}};
    st.adam.step = 5;
    for (const auto& t : st.params.tensors()) {
      st.adam.first_moment.push_back(Tensor<float>(t->shape(), t->array() * 0.5f));
      st.adam.second_moment.push_back(Tensor<float>(t->shape(), t->array().square()));
    }
    Rng pool_rng(2);
    st.pool.push_back({Tensor<float>::uniform({4, 4, 1}, pool_rng, -1.f, 1.f), Label::parse("101"), 12,
                       Tensor<float>::normal({4, 4, 1}, pool_rng), Tensor<float>::normal({4, 4, c.layout.n_h}, pool_rng)});
    st.pool.push_back({Tensor<float>::uniform({4, 4, 1}, pool_rng, -1.f, 1.f), Label::null(), 3,
                       Tensor<float>::normal({4, 4, 1}, pool_rng), Tensor<float>::normal({4, 4, c.layout.n_h}, pool_rng)});
    Rng rng(99);
    rng();
    const fs::path p = scratch("ckpt") / "a.geca";
    save_train_state(p, st, &rng, {{"note", "x"}});
    Rng back(0);
    nlohmann::json header;
    auto loaded = load_train_state(p, &back, &header);
    CHECK(back == rng);
    CHECK(loaded.step == 17);
    CHECK(loaded.adam.step == 5);
    CHECK(header["run"]["note"] == "x");
    REQUIRE(loaded.pool.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(loaded.pool[i].clean == st.pool[i].clean);
      CHECK(loaded.pool[i].label == st.pool[i].label);
      CHECK(loaded.pool[i].t == st.pool[i].t);
      CHECK(loaded.pool[i].noisy == st.pool[i].noisy);
      CHECK(loaded.pool[i].hidden == st.pool[i].hidden);
    }
    const auto a = st.params.tensors(), b = loaded.params.tensors();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(*a[i] == *b[i]);
      CHECK(loaded.adam.first_moment[i] == st.adam.first_moment[i]);
      CHECK(loaded.adam.second_moment[i] == st.adam.second_moment[i]);
    }
    // Saving the loaded state reproduces the file byte for byte.
    const fs::path q = p.parent_path() / "b.geca";
    save_train_state(q, loaded, &back, header["run"]);
    CHECK(slurp(p) == slurp(q));
  }

  TEST_CASE("bad magic, unknown version, truncation and trailing bytes are corrupt") {
    const auto c = small_theta_config(1);
    const fs::path dir = scratch("corrupt");
    save_train_state(dir / "ok.geca", TrainState<float>{random_theta<float>(c, 2), {}, 0, {}}, nullptr);
    const std::string bytes = slurp(dir / "ok.geca");
    const auto write = [&](const std::string& name, const std::string& data) {
      std::ofstream(dir / name, std::ios::binary) << data;
      return dir / name;
    };
    std::string magic = bytes;
    magic[0] = 'X';
    std::string version = bytes;
    version[4] = 99;
    CHECK_THROWS_AS(read_checkpoint(write("magic.geca", magic)), CorruptArtifact);
    CHECK_THROWS_AS(read_checkpoint(write("version.geca", version)), CorruptArtifact);
    CHECK_THROWS_AS(read_checkpoint(write("short.geca", bytes.substr(0, bytes.size() / 2))), CorruptArtifact);
    CHECK_THROWS_AS(read_checkpoint(write("long.geca", bytes + "z")), CorruptArtifact);
    CHECK_THROWS_AS(read_checkpoint(write("empty.geca", "")), CorruptArtifact);
    CHECK_NOTHROW(read_checkpoint(dir / "ok.geca"));
  }
}

TEST_SUITE("run config") {
  TEST_CASE("parse, override and dump") {
    const auto c = RunConfig::parse("# comment\ntrain.steps = 12\nsample.mode = out  # trailing\n");
    CHECK(c.integer("train.steps") == 12);
    CHECK(c.text("sample.mode") == "out");
    CHECK(c.real("train.lr") == 1e-3);
    RunConfig d = c;
    d.apply_override("train.lr=0.01");
    CHECK(d.real("train.lr") == 0.01);
    CHECK(RunConfig::parse(d.dump()).dump() == d.dump());
    CHECK(d.dump().find("train.heredity_pool = ") != std::string::npos);
  }

  TEST_CASE("unknown keys and bad values are rejected") {
    CHECK_THROWS_AS(RunConfig::parse("train.stepz = 3\n"), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse("train.steps = many\n"), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse("train.steps\n"), ConfigError);
    CHECK_THROWS_AS(RunConfig().apply_override("seed"), ConfigError);
    RunConfig c;
    c.set("train.fire_rate", "2");
    CHECK_THROWS_AS(c.train_config(), ConfigError);
  }

  TEST_CASE("integer lists") {
    CHECK(parse_int_list("6,12,24") == std::vector<int>{6, 12, 24});
    CHECK(parse_int_list(" 3 ") == std::vector<int>{3});
    CHECK_THROWS_AS(parse_int_list("6,,24"), ConfigError);
    CHECK_THROWS_AS(parse_int_list("a"), ConfigError);
  }
}

TEST_SUITE("images") {
  TEST_CASE("8-bit round trip is exact on the grid of representable values") {
    const fs::path dir = scratch("images");
    Tensor<float> gray({3, 4, 1});
    for (Index i = 0; i < gray.size(); ++i) gray[i] = static_cast<float>(i * 20) / 127.5f - 1.f;
    save_image(dir / "g.pgm", gray);
    const auto back = load_image(dir / "g.pgm");
    CHECK(back.shape() == gray.shape());
    CHECK(max_abs_diff(back, gray) < 1e-6);
    save_image(dir / "g2.pgm", back);
    CHECK(slurp(dir / "g.pgm") == slurp(dir / "g2.pgm"));

    Rng rng(4);
    const auto rgb = Tensor<float>::uniform({5, 2, 3}, rng, -1.f, 1.f);
    save_image(dir / "c.ppm", rgb);
    CHECK(max_abs_diff(load_image(dir / "c.ppm"), rgb) <= 1.f / 255.f + 1e-6);
  }

  TEST_CASE("psnr") {
    Rng rng(5);
    const auto a = Tensor<float>::uniform({4, 4, 1}, rng, -1.f, 1.f);
    CHECK(std::isinf(psnr(a, a)));
    Tensor<float> b = a;
    b.array() += 0.2f;
    CHECK(psnr(a, b) == doctest::Approx(10 * std::log10(4.0 / 0.04)).epsilon(1e-5));
  }

  TEST_CASE("malformed files are reported") {
    const fs::path dir = scratch("bad_images");
    std::ofstream(dir / "x.pgm") << "P5\n4 4\n255\nab";
    CHECK_THROWS(load_image(dir / "x.pgm"));
    CHECK_THROWS(load_image(dir / "missing.pgm"));
  }
}

TEST_SUITE("commands") {
  TEST_CASE("missing manifest exits 2 and names the path") {
    const auto r = run(with_tiny({"train", "--manifest", "/nonexistent/m.csv", "--out", scratch("nomani").string()}));
    CHECK(r.code == exit_code::bad_input);
    CHECK(r.err.find("/nonexistent/m.csv") != std::string::npos);
  }

  TEST_CASE("usage errors exit 2") {
    CHECK(run({}).code == exit_code::bad_input);
    CHECK(run({"sample"}).code == exit_code::bad_input);
    CHECK(run({"frobnicate"}).code == exit_code::bad_input);
  }

  TEST_CASE("training writes checkpoints, a log and the resolved config") {
    const auto& t = Trained::get();
    const fs::path run_dir = t.checkpoint.parent_path();
    CHECK(fs::exists(run_dir / "checkpoint_3.geca"));
    CHECK(fs::exists(run_dir / "checkpoint_6.geca"));
    CHECK(fs::exists(run_dir / "config.resolved"));
    std::ifstream log(run_dir / "train_log.csv");
    std::string line;
    std::getline(log, line);
    CHECK(line == "step,loss,seconds");
    int rows = 0;
    while (std::getline(log, line)) ++rows;
    CHECK(rows == 6);
  }

  TEST_CASE("resume continues the step numbering") {
    const auto& t = Trained::get();
    const fs::path dir = scratch("resume");
    fs::copy(t.checkpoint.parent_path(), dir / "run");
    auto args = with_tiny({"train", "--manifest", t.manifest.string(), "--out", (dir / "run").string(), "--resume",
                           (dir / "run" / "checkpoint_3.geca").string()});
    args.insert(args.end(), {"--set", "train.steps=8"});
    const auto r = run(args);
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(r.out.find("resuming from step 3") != std::string::npos);
    CHECK(r.out.find("\n4,") != std::string::npos);
    CHECK(r.out.find("\n1,") == std::string::npos);
    CHECK(load_train_state(dir / "run" / "model.geca").step == 8);

    // Resuming from step 3 to 6 replays the original run exactly.
    const fs::path again = scratch("resume_exact");
    const auto r2 = run(with_tiny({"train", "--manifest", t.manifest.string(), "--out", again.string(), "--resume",
                                   (t.checkpoint.parent_path() / "checkpoint_3.geca").string()}));
    REQUIRE(r2.code == 0);
    auto a = load_train_state(t.checkpoint), b = load_train_state(again / "model.geca");
    const auto pa = a.params.tensors(), pb = b.params.tensors();
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(*pa[i] == *pb[i]);
  }

  TEST_CASE("corrupt checkpoint exits 3") {
    const auto& t = Trained::get();
    const fs::path dir = scratch("trunc");
    const std::string bytes = slurp(t.checkpoint);
    std::ofstream(dir / "cut.geca", std::ios::binary) << bytes.substr(0, bytes.size() - 7);
    const auto r = run(with_tiny({"sample", "--checkpoint", (dir / "cut.geca").string(), "--out", dir.string()}));
    CHECK(r.code == exit_code::corrupt);
    CHECK(run(with_tiny({"sample", "--checkpoint", (dir / "none.geca").string()})).code == exit_code::bad_input);
  }

  TEST_CASE("sampling with a fixed seed is byte-identical") {
    const auto& t = Trained::get();
    const fs::path a = scratch("sample_a"), b = scratch("sample_b");
    const auto args = [&](const fs::path& out) {
      return with_tiny({"sample", "--checkpoint", t.checkpoint.string(), "--label", "10000", "--n", "2", "--seed", "7",
                        "--out", out.string()});
    };
    REQUIRE(run(args(a)).code == 0);
    REQUIRE(run(args(b)).code == 0);
    for (const char* f : {"sample_000.pgm", "sample_001.pgm", "metadata.json"}) CHECK(slurp(a / f) == slurp(b / f));
    CHECK(slurp(a / "sample_000.pgm") != slurp(a / "sample_001.pgm"));
    const auto meta = nlohmann::json::parse(slurp(a / "metadata.json"));
    CHECK(meta["images"].size() == 2);
    CHECK(meta["mode"] == "h");
  }

  TEST_CASE("mode and label validation") {
    const auto& t = Trained::get();
    const fs::path dir = scratch("modes");
    for (const char* m : {"none", "out", "out+h", "h"})
      CHECK(run(with_tiny({"sample", "--checkpoint", t.checkpoint.string(), "--mode", m, "--out", dir.string()})).code ==
            0);
    for (const char* m : {"H", "hidden", "out+H", ""})
      CHECK(run(with_tiny({"sample", "--checkpoint", t.checkpoint.string(), "--mode", m, "--out", dir.string()})).code ==
            exit_code::bad_input);
    CHECK(run(with_tiny({"sample", "--checkpoint", t.checkpoint.string(), "--label", "101", "--out", dir.string()}))
              .code == exit_code::bad_input);
  }

  TEST_CASE("an M list renders a sweep contact sheet") {
    const auto& t = Trained::get();
    const fs::path dir = scratch("sweep");
    const auto r = run(with_tiny({"sample", "--checkpoint", t.checkpoint.string(), "--m", "6,12,24", "--t", "5",
                                  "--out", dir.string()}));
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto sheet = load_image(dir / "sweep_000.pgm");
    CHECK(sheet.dim(0) == 8 + 2);
    CHECK(sheet.dim(1) == 3 * 8 + 4);
  }

  TEST_CASE("ablation emits four finite rows and is reproducible") {
    const auto& t = Trained::get();
    const fs::path dir = scratch("ablate");
    const auto args = [&](const char* name) {
      return with_tiny({"ablate", "--checkpoint", t.checkpoint.string(), "--manifest", t.manifest.string(), "--out",
                        (dir / name).string(), "--seed", "2"});
    };
    REQUIRE(run(args("a.csv")).code == 0);
    REQUIRE(run(args("b.csv")).code == 0);
    CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
    std::ifstream in(dir / "a.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "mode,mmd");
    std::vector<std::string> modes;
    while (std::getline(in, line)) {
      const auto comma = line.find(',');
      modes.push_back(line.substr(0, comma));
      const double v = std::stod(line.substr(comma + 1));
      CHECK(std::isfinite(v));
      CHECK(v >= -1e-6);
    }
    CHECK(modes == std::vector<std::string>{"none", "out", "out+h", "h"});
  }

  TEST_CASE("expansion then classification emits both metric rows in [0, 1]") {
    const auto& t = Trained::get();
    const fs::path dir = scratch("expand");
    CHECK(run(with_tiny({"expand", "--checkpoint", t.checkpoint.string(), "--manifest", t.manifest.string(), "--k", "0",
                         "--out", dir.string()}))
              .code == exit_code::bad_input);
    const auto e = run(with_tiny({"expand", "--checkpoint", t.checkpoint.string(), "--manifest", t.manifest.string(),
                                  "--k", "2", "--out", dir.string()}));
    REQUIRE_MESSAGE(e.code == 0, e.err);
    CHECK(load_manifest(dir / "manifest.csv").size() == 24);
    const auto c = run(with_tiny({"classify", "--manifest", t.manifest.string(), "--synthetic",
                                  (dir / "manifest.csv").string(), "--out", (dir / "metrics.csv").string()}));
    REQUIRE_MESSAGE(c.code == 0, c.err);
    std::ifstream in(dir / "metrics.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line.rfind("setting,", 0) == 0);
    std::vector<std::string> settings;
    while (std::getline(in, line)) {
      std::stringstream ss(line);
      std::string cell;
      std::getline(ss, cell, ',');
      settings.push_back(cell);
      while (std::getline(ss, cell, ',')) {
        const double v = std::stod(cell);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }
    CHECK(settings == std::vector<std::string>{"baseline", "augmented"});
    CHECK(fs::exists(dir / "metrics_per_label.csv"));
  }

  TEST_CASE("smoke config trains 50 steps on 16x16 within five minutes") {
    const fs::path dir = scratch("smoke");
    REQUIRE(run({"toy", "--out", (dir / "toy").string(), "--n", "16"}).code == 0);
    const auto start = std::chrono::steady_clock::now();
    const auto r = run({"train", "--manifest", (dir / "toy" / "manifest.csv").string(), "--out",
                        (dir / "run").string(), "--set", "train.steps=50"});
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    REQUIRE_MESSAGE(r.code == 0, r.err);
    MESSAGE("smoke training took " << secs << " s");
    CHECK(secs < 300.0);
    CHECK(r.out.find("final loss") != std::string::npos);
  }
}
