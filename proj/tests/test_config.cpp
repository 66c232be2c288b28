#include <doctest.h>

#include "helpers.hpp"
#include "lm2d/config.hpp"
#include "lm2d/error.hpp"
#include "lm2d/util.hpp"

using namespace lm2d;

TEST_CASE("defaults are complete and typed views validate") {
  const RunConfig c;
  CHECK(c.schedule().epsilon == 0.002);
  CHECK(c.schedule().T == 80.0);
  CHECK(c.schedule().n_grid == 18);
  CHECK(c.network().width == 256);
  CHECK(c.sampler().n_steps == 32);
  CHECK(c.window_frames() == 360);
  CHECK(c.synthetic().motif_vocab.size() == 4);
  CHECK(c.get_bool("model.attention"));
}

TEST_CASE("unknown keys are rejected with their location") {
  RunConfig c;
  CHECK_THROWS_AS(c.set("model.depth", "3"), UsageError);
  try {
    c.merge_text("seed=1\n\n# comment\nmodel.colour=red\n", "run.conf");
    FAIL("expected UsageError");
  } catch (const UsageError& e) {
    CHECK(std::string(e.what()) == "run.conf:4: unknown configuration key 'model.colour'");
  }
  CHECK_THROWS_AS(c.merge_text("no equals sign\n"), UsageError);
  CHECK_THROWS_AS(c.get("absent"), UsageError);
}

TEST_CASE("typed getters reject malformed values") {
  RunConfig c;
  c.set("train.steps", "12x");
  CHECK_THROWS_AS(c.get_int("train.steps"), UsageError);
  c.set("optim.lr", "nan");
  CHECK_THROWS_AS(c.get_double("optim.lr"), UsageError);
  c.set("model.attention", "yes");
  CHECK_THROWS_AS(c.get_bool("model.attention"), UsageError);
  c.set("schedule.epsilon", "100");
  CHECK_THROWS_AS(c.schedule(), UsageError);
}

TEST_CASE("later assignments win and render is canonical") {
  RunConfig a, b;
  a.merge_text("seed=3\nseed=4\n");
  b.set("seed", "4");
  CHECK(a.render() == b.render());
  CHECK(a.digest() == b.digest());
  CHECK(a.digest().size() == 64);
  b.set("seed", "5");
  CHECK(a.digest() != b.digest());

  RunConfig round;
  round.merge_text(a.render());
  CHECK(round.render() == a.render());
}

TEST_CASE("desk config loads") {
  RunConfig c;
  c.merge_file(std::filesystem::path(LM2D_DATA_DIR) / ".." / "configs" / "desk.conf");
  CHECK(c.network().width == 64);
  CHECK(c.get_int("train.steps") == 3000);
  CHECK(c.window_frames() == 120);
  CHECK_THROWS_AS(c.merge_file("/nonexistent/lm2d.conf"), UsageError);
}
