#include <math.h>
#include <stdio.h>
#include "medresp.h"

#define CHECK(call)                                                             \
    do {                                                                        \
        MrStatus s_ = (call);                                                   \
        if (s_ != MR_STATUS_OK) {                                               \
            fprintf(stderr, "%s -> %d: %s\n", #call, (int)s_, mr_last_error()); \
            return 1;                                                           \
        }                                                                       \
    } while (0)

int main(void) {
    double maps[2 * 4] = {1, 0, 0, 0, 0, 1, 0, 0};
    MrMatrix *m = NULL;
    MrBasis *b = NULL;
    double k = 0.0;
    CHECK(mr_matrix_new(2, 4, maps, &m));
    CHECK(mr_basis_new(m, &b));
    CHECK(mr_pabs_kernel(b, b, 1.0, &k));
    if (fabs(k - tanh(2.0)) > 1e-12) {
        fprintf(stderr, "kernel %g\n", k);
        return 1;
    }

    unsigned char y[3] = {1, 0, 1};
    double s[3] = {0.9, 0.8, 0.7};
    double ap = 0.0;
    CHECK(mr_average_precision(y, s, 3, &ap));
    if (fabs(ap - 5.0 / 6.0) > 1e-12) {
        return 1;
    }
    if (mr_matrix_read("/nonexistent.msmx", &m) != MR_STATUS_IO || mr_last_error() == NULL) {
        return 1;
    }
    mr_basis_free(b);
    mr_matrix_free(m);
    printf("ok %s\n", mr_version());
    return 0;
}
