#include <stdio.h>

static int table[4] = {1, 2, 3, 4};

int sum(const int *xs, int n) {
  int s = 0;
  for (int i = 0; i < n; i++)
    s += xs[i];
  return s;
}

int main(void) {
  printf("%d\n", sum(table, 4));
  return 0;
}
