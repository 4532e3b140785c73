#include <math.h>
#include <stdio.h>
#include "hilbert_ustat.h"

int main(void) {
    HusModel *m = NULL;
    HusKernel *k = NULL;
    HusPath *p = NULL;
    double table[4] = {1.0, -1.0, -1.0, 1.0};
    double u = 0.0;
    HusRatePlan plan;
    char msg[256];

    if (hus_model_two_state(0.25, 0.25, &m) != HUS_STATUS_OK) return 1;
    if (hus_kernel_table(2, 1, table, &k) != HUS_STATUS_OK) return 2;
    if (hus_ustat_simulate(m, k, 50, 3, &p) != HUS_STATUS_OK) return 3;
    if (hus_path_len(p) != 50) return 4;
    if (hus_path_value(p, 50, &u, 1) != HUS_STATUS_OK) return 5;
    if (hus_path_value(p, 51, &u, 1) != HUS_STATUS_OUT_OF_RANGE) return 6;
    if (hus_last_error(msg, sizeof msg) == 0) return 7;
    if (hus_rate_plan("T3", 1.5, 0.25, 0.1, &plan) != HUS_STATUS_OK) return 8;
    if (fabs(plan.a - 11.0 / 18.0) > 1e-12) return 9;
    if (hus_rate_plan("T9", 1.5, 0.25, 0.1, &plan) == HUS_STATUS_OK) return 10;
    hus_path_free(p);
    hus_kernel_free(k);
    hus_model_free(m);
    printf("ok %s\n", hus_version());
    return 0;
}
