/* Compiles the public header as C and round-trips one config value. */
#include <stdio.h>
#include <string.h>

#include "lm2d/lm2d.h"

int main(void) {
  lm2d_config* cfg = NULL;
  char buf[32];
  size_t needed = 0;
  if (lm2d_config_create(&cfg) != LM2D_OK) return 1;
  if (lm2d_config_set(cfg, "sample.steps", "8") != LM2D_OK) return 2;
  if (lm2d_config_get(cfg, "sample.steps", buf, sizeof buf, &needed) != LM2D_OK || strcmp(buf, "8") != 0) return 3;
  if (lm2d_config_set(cfg, "bogus", "1") != LM2D_ERR_USAGE) return 4;
  lm2d_config_destroy(cfg);
  printf("lm2d %s\n", lm2d_version());
  return 0;
}
