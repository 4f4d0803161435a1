#include <cstdio>

int main() {
    std::puts("skytrack: subcommands pending");
    return 0;
}
