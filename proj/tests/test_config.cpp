#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "leaprec/dataset.hpp"
#include "leaprec/errors.hpp"
#include "leaprec/runconfig.hpp"

using namespace leaprec;
namespace fs = std::filesystem;

namespace {

fs::path test_dir() {
  static fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "leaprec_test_config";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  REQUIRE(static_cast<bool>(out));
  out << text;
}

InteractionLog tiny_log(std::vector<std::int64_t> timestamps) {
  InteractionLog log;
  log.user_ids = {"u0"};
  log.item_ids = {"i0"};
  for (std::int64_t ts : timestamps) log.interactions.push_back({0, 0, ts});
  return log;
}

// Restores an environment variable on scope exit.
struct EnvGuard {
  std::string name;
  std::string saved;
  bool had = false;
  explicit EnvGuard(const std::string& n) : name(n) {
    if (const char* v = std::getenv(n.c_str())) {
      saved = v;
      had = true;
    }
  }
  ~EnvGuard() {
    if (had)
      ::setenv(name.c_str(), saved.c_str(), 1);
    else
      ::unsetenv(name.c_str());
  }
};

}  // namespace

TEST_CASE("fnv1a_hex matches published vectors") {
  // Standard FNV-1a 64-bit test vectors.
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
  CHECK(fnv1a_hex("foobar") == "85944171f73967e8");
  CHECK(fnv1a_hex("alpha=0.05") != fnv1a_hex("alpha=0.06"));
  CHECK(fnv1a_hex("x").size() == 16);
  for (char c : fnv1a_hex("x")) CHECK(((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f')));
}

TEST_CASE("parse_k_list accepts cutoff lists and rejects junk") {
  CHECK(parse_k_list("1,5,10") == std::vector<int>{1, 5, 10});
  CHECK(parse_k_list("7") == std::vector<int>{7});
  CHECK(parse_k_list("10,1") == std::vector<int>{10, 1});  // order preserved
  CHECK(parse_k_list("1,,5") == std::vector<int>{1, 5});   // empty entries skipped

  CHECK_THROWS_AS(parse_k_list("0"), ConfigError);
  CHECK_THROWS_AS(parse_k_list("-2"), ConfigError);
  CHECK_THROWS_AS(parse_k_list("five"), ConfigError);
  CHECK_THROWS_AS(parse_k_list("3x"), ConfigError);
  CHECK_THROWS_AS(parse_k_list(""), ConfigError);
  CHECK_THROWS_AS(parse_k_list(","), ConfigError);
}

TEST_CASE("parse_month_arg maps YYYY-MM to absolute months") {
  CHECK(parse_month_arg("1970-01") == 1970 * 12);
  CHECK(parse_month_arg("2020-01") == 2020 * 12);
  CHECK(parse_month_arg("1999-12") == 1999 * 12 + 11);
  CHECK(parse_month_arg("2020-1") == 2020 * 12);  // lenient about zero padding

  CHECK_THROWS_AS(parse_month_arg("2020"), ConfigError);
  CHECK_THROWS_AS(parse_month_arg("2020-13"), ConfigError);
  CHECK_THROWS_AS(parse_month_arg("2020-00"), ConfigError);
  CHECK_THROWS_AS(parse_month_arg("1969-12"), ConfigError);  // pre-epoch
  CHECK_THROWS_AS(parse_month_arg("2020-01-05"), ConfigError);
  CHECK_THROWS_AS(parse_month_arg("May 2020"), ConfigError);
  CHECK_THROWS_AS(parse_month_arg(""), ConfigError);
}

TEST_CASE("resolve_cut_time prefers cut_month and falls back to train_months") {
  const std::int64_t feb2020 = month_start_timestamp(2020 * 12 + 1);

  RunConfig rc;
  rc.cut_month = "2020-06";
  rc.train_months = 3;  // ignored when cut_month is set
  const InteractionLog log = tiny_log({feb2020 + 86400, feb2020 + 5});
  CHECK(resolve_cut_time(rc, log) == month_start_timestamp(2020 * 12 + 5));

  rc.cut_month.clear();
  // Earliest interaction is in 2020-02; +3 months puts the cut at 2020-05.
  CHECK(resolve_cut_time(rc, log) == month_start_timestamp(2020 * 12 + 4));

  // The earliest timestamp is found even when rows are unsorted.
  const InteractionLog unsorted = tiny_log({feb2020 + 999999, feb2020 + 1, feb2020 + 50});
  CHECK(resolve_cut_time(rc, unsorted) == month_start_timestamp(2020 * 12 + 4));

  RunConfig neither;
  CHECK_THROWS_AS(resolve_cut_time(neither, log), ConfigError);

  RunConfig rel;
  rel.train_months = 2;
  const InteractionLog empty = tiny_log({});
  CHECK_THROWS_AS(resolve_cut_time(rel, empty), DataError);
}

TEST_CASE("resolve_out_root prefers the flag, then the environment") {
  EnvGuard guard("LEAPREC_OUT_ROOT");

  RunConfig rc;
  rc.out = "explicit_dir";
  ::setenv("LEAPREC_OUT_ROOT", "/env/root", 1);
  CHECK(resolve_out_root(rc) == "explicit_dir");

  rc.out.clear();
  CHECK(resolve_out_root(rc) == "/env/root");

  ::unsetenv("LEAPREC_OUT_ROOT");
  CHECK(resolve_out_root(rc) == "runs");

  ::setenv("LEAPREC_OUT_ROOT", "", 1);  // empty env counts as unset
  CHECK(resolve_out_root(rc) == "runs");
}

TEST_CASE("prepare_run_dir creates nested directories") {
  const std::string root = (test_dir() / "outroot").string();
  const std::string dir = prepare_run_dir(root, "exp-1");
  CHECK(fs::is_directory(dir));
  CHECK(fs::path(dir) == fs::path(root) / "exp-1");
  // Idempotent.
  CHECK(prepare_run_dir(root, "exp-1") == dir);

  // A path component that is a regular file cannot become a directory.
  const fs::path blocker = test_dir() / "blocker";
  write_file(blocker, "not a dir");
  CHECK_THROWS_AS(prepare_run_dir(blocker.string(), "x"), DataError);
}

TEST_CASE("command line flags parse into the run config") {
  CLI::App app{"t"};
  RunConfig rc;
  attach_run_options(app, rc);
  app.parse(
      "--data log.tsv --cut-month 2021-03 --granularity 2 --dim-gtl 8 --dim-otl 4 "
      "--gnn-layers 1 --sa-layers 3 --max-seq-len 25 --dropout 0.1 --alpha 0.125 "
      "--beta 0.02 --eta 0.03 --k-steps 5 --batch-size 32 --epochs 7 --patience 0 "
      "--meta-optimizer adam --meta-mode fomaml --seed 99 --k-list 1,3 "
      "--eval-negatives 50 --eval-seed 123 --literal-bpr --normalize-otl-meta "
      "--record-slice-params",
      false);

  CHECK(rc.data == "log.tsv");
  CHECK(rc.cut_month == "2021-03");
  CHECK(rc.granularity == 2);
  CHECK(rc.dim_gtl == 8);
  CHECK(rc.dim_otl == 4);
  CHECK(rc.gnn_layers == 1);
  CHECK(rc.sa_layers == 3);
  CHECK(rc.max_seq_len == 25);
  CHECK(rc.dropout == doctest::Approx(0.1));
  CHECK(rc.alpha == doctest::Approx(0.125));
  CHECK(rc.beta == doctest::Approx(0.02));
  CHECK(rc.eta == doctest::Approx(0.03));
  CHECK(rc.k_steps == 5);
  CHECK(rc.batch_size == 32);
  CHECK(rc.epochs == 7);
  CHECK(rc.patience == 0);
  CHECK(rc.meta_optimizer == "adam");
  CHECK(rc.meta_mode == "fomaml");
  CHECK(rc.seed == 99);
  CHECK(rc.k_list == "1,3");
  CHECK(rc.eval_negatives == 50);
  CHECK(rc.eval_seed == 123);
  CHECK(rc.literal_bpr);
  CHECK(rc.normalize_otl_meta);
  CHECK(rc.record_slice_params);
  // Untouched fields keep their defaults.
  CHECK(rc.val_window == 6);
  CHECK(!rc.literal_attn);
  CHECK(!rc.static_mf);

  // Unparsed app leaves every default alone.
  CLI::App plain{"t"};
  RunConfig defaults;
  attach_run_options(plain, defaults);
  plain.parse("", false);
  CHECK(defaults.dim_gtl == 16);
  CHECK(defaults.alpha == doctest::Approx(0.05));
  CHECK(defaults.k_steps == 40);
  CHECK(defaults.meta_mode == "leap");
  CHECK(defaults.val_window == 6);
}

TEST_CASE("option validators reject out-of-range values") {
  auto expect_parse_error = [](const std::string& line) {
    CLI::App app{"t"};
    RunConfig rc;
    attach_run_options(app, rc);
    CHECK_THROWS_AS(app.parse(line, false), CLI::ParseError);
  };
  expect_parse_error("--granularity 0");
  expect_parse_error("--val-window 0");
  expect_parse_error("--dim-gtl -1");
  expect_parse_error("--dropout 1.5");
  expect_parse_error("--alpha 0");
  expect_parse_error("--k-steps 0");
  expect_parse_error("--epochs -2");
  expect_parse_error("--meta-optimizer rmsprop");
  expect_parse_error("--meta-mode maml");
  expect_parse_error("--no-such-flag");
  expect_parse_error("--config /definitely/not/a/file.cfg");
}

TEST_CASE("config files load and command line flags override them") {
  const fs::path cfg = test_dir() / "run.cfg";
  write_file(cfg, "dim-gtl=8\nmeta-mode=fomaml\nalpha=0.5\nliteral-attn=true\n");

  CLI::App app{"t"};
  RunConfig rc;
  attach_run_options(app, rc);
  app.parse("--config " + cfg.string() + " --dim-gtl 4", false);

  CHECK(rc.dim_gtl == 4);  // flag beats file
  CHECK(rc.meta_mode == "fomaml");
  CHECK(rc.alpha == doctest::Approx(0.5));
  CHECK(rc.literal_attn);
  CHECK(rc.dim_otl == 16);  // untouched default
}

TEST_CASE("serialized configs reparse to the identical state") {
  CLI::App app{"t"};
  RunConfig rc;
  attach_run_options(app, rc);
  app.parse(
      "--data d.tsv --cut-month 2020-05 --dim-gtl 8 --dim-otl 4 --alpha 0.125 "
      "--k-list 1,3 --seed 77 --literal-attn",
      false);
  const std::string ser = serialize_config(app);
  CHECK(ser.find("dim-gtl=8") != std::string::npos);
  CHECK(ser.find("cut-month=\"2020-05\"") != std::string::npos);
  // Untouched options serialize with their defaults, so the stored config is
  // self-contained.
  CHECK(ser.find("k-steps=40") != std::string::npos);
  CHECK(ser.find("literal-bpr=false") != std::string::npos);

  const fs::path cfg = test_dir() / "roundtrip.cfg";
  write_file(cfg, ser);

  CLI::App app2{"t"};
  RunConfig rc2;
  attach_run_options(app2, rc2);
  app2.parse("--config " + cfg.string(), false);

  CHECK(rc2.data == rc.data);
  CHECK(rc2.cut_month == rc.cut_month);
  CHECK(rc2.dim_gtl == rc.dim_gtl);
  CHECK(rc2.dim_otl == rc.dim_otl);
  CHECK(rc2.alpha == rc.alpha);
  CHECK(rc2.k_list == rc.k_list);
  CHECK(rc2.seed == rc.seed);
  CHECK(rc2.literal_attn == rc.literal_attn);
  CHECK(rc2.granularity == rc.granularity);
  CHECK(rc2.meta_mode == rc.meta_mode);

  // Serialization reaches a fixed point, so the stored config hash is stable.
  const std::string ser2 = serialize_config(app2);
  CHECK(ser2 == ser);
  CHECK(fnv1a_hex(ser2) == fnv1a_hex(ser));
}

TEST_CASE("run config maps onto trainer and model configs") {
  RunConfig rc;
  rc.alpha = 0.125;
  rc.beta = 0.02;
  rc.eta = 0.03;
  rc.k_steps = 6;
  rc.batch_size = 48;
  rc.epochs = 9;
  rc.granularity = 2;
  rc.dim_gtl = 12;
  rc.dim_otl = 10;
  rc.seed = 1234;
  rc.meta_optimizer = "adam";
  rc.meta_mode = "fomaml";
  rc.normalize_otl_meta = true;
  rc.patience = 3;
  rc.gnn_layers = 1;
  rc.sa_layers = 3;
  rc.max_seq_len = 33;
  rc.dropout = 0.15;
  rc.literal_attn = true;

  const TrainConfig tc = to_train_config(rc);
  CHECK(tc.alpha == 0.125);
  CHECK(tc.beta == 0.02);
  CHECK(tc.eta == 0.03);
  CHECK(tc.inner_steps == 6);
  CHECK(tc.batch_size == 48);
  CHECK(tc.epochs == 9);
  CHECK(tc.granularity_months == 2);
  CHECK(tc.dim_gtl == 12);
  CHECK(tc.dim_otl == 10);
  CHECK(tc.seed == 1234);
  CHECK(tc.meta_optimizer == "adam");
  CHECK(tc.meta_mode == "fomaml");
  CHECK(tc.normalize_otl_meta);
  CHECK(tc.patience == 3);

  const ModelConfig gtl = branch_config(rc, /*gtl=*/true, 100, 80);
  CHECK(gtl.num_users == 100);
  CHECK(gtl.num_items == 80);
  CHECK(gtl.dim == 12);
  CHECK(gtl.gnn_layers == 1);
  CHECK(gtl.sa_layers == 3);
  CHECK(gtl.max_seq_len == 33);
  CHECK(gtl.dropout == 0.15);
  CHECK(gtl.literal_attn);

  const ModelConfig otl = branch_config(rc, /*gtl=*/false, 100, 80);
  CHECK(otl.dim == 10);
  CHECK(otl.gnn_layers == 1);

  // The pooled baseline gets the combined budget and no refinement stages.
  const ModelConfig pooled = static_config(rc, 100, 80);
  CHECK(pooled.dim == 22);
  CHECK(pooled.gnn_layers == 0);
  CHECK(pooled.sa_layers == 0);
  CHECK(pooled.dropout == 0.0);
  CHECK(pooled.max_seq_len == 33);
  CHECK(pooled.literal_attn);
}
