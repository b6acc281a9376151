#include <math.h>
#include <stdio.h>
#include <string.h>

#include "edspec.h"

static int fail(const char *what) {
    char buf[256];
    edspec_last_error_message(buf, sizeof buf);
    fprintf(stderr, "%s: %s\n", what, buf);
    return 1;
}

int main(void) {
    EdspecSystem *sys = NULL;
    const char *names[] = {"lambda"};
    const double values[] = {-0.5};
    if (edspec_system_builtin("scalar_decay", names, values, 1, &sys) != EDSPEC_STATUS_OK)
        return fail("builtin");

    EdspecSpectrum *spec = NULL;
    EdspecOptions opts = edspec_options_default();
    if (edspec_spectrum(sys, &opts, &spec) != EDSPEC_STATUS_OK)
        return fail("spectrum");
    double lo, hi;
    if (edspec_spectrum_count(spec) != 1 ||
        edspec_spectrum_interval(spec, 0, &lo, &hi) != EDSPEC_STATUS_OK)
        return fail("interval");
    if (fabs(lo + 0.5) > 0.05 || fabs(hi + 0.5) > 0.05) {
        fprintf(stderr, "unexpected interval [%g, %g]\n", lo, hi);
        return 1;
    }

    EdspecDichotomy d;
    if (edspec_dichotomy(sys, 0.0, NULL, &d) != EDSPEC_STATUS_OK)
        return fail("dichotomy");
    if (d.verdict != EDSPEC_VERDICT_CERTIFIED || d.rank != 1)
        return 1;

    EdspecSystem *bad = NULL;
    if (edspec_system_builtin("missing", NULL, NULL, 0, &bad) != EDSPEC_STATUS_INPUT || bad)
        return 1;
    if (edspec_last_error_length() == 0)
        return 1;

    edspec_spectrum_free(spec);
    edspec_system_free(sys);
    printf("ok %s [%.4f, %.4f]\n", edspec_version(), lo, hi);
    return 0;
}
