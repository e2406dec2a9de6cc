/* The public header must compile as C and link against the shared library. */
#include <stdio.h>
#include <string.h>

#include "vcwn.h"

static int failures = 0;

#define EXPECT(cond)                                           \
  do {                                                         \
    if (!(cond)) {                                             \
      fprintf(stderr, "%s:%d: %s\n", __FILE__, __LINE__, #cond); \
      ++failures;                                              \
    }                                                          \
  } while (0)

int main(void) {
  double x[160];
  vcwn_wave* w = NULL;
  vcwn_experiment* e = NULL;
  size_t i;

  for (i = 0; i < 160; ++i) x[i] = (double)i / 160.0 - 0.5;
  EXPECT(vcwn_wave_create(x, 160, 16000, &w) == VCWN_OK);
  EXPECT(vcwn_wave_length(w) == 160);
  EXPECT(vcwn_wave_samples(w)[1] == x[1]);
  vcwn_wave_free(w);

  EXPECT(vcwn_wave_create(x, 160, 16000, NULL) == VCWN_ERR_INVALID_ARGUMENT);
  EXPECT(strlen(vcwn_last_error()) > 0);

  EXPECT(vcwn_experiment_create(&e) == VCWN_OK);
  EXPECT(vcwn_experiment_validate(e) == VCWN_ERR_CONFIG);
  EXPECT(vcwn_experiment_set(e, "seed", "1") == VCWN_OK);
  EXPECT(vcwn_experiment_validate(e) == VCWN_OK);
  vcwn_experiment_free(e);

  if (failures == 0) printf("capi_smoke: ok\n");
  return failures == 0 ? 0 : 1;
}
