#include <cstdio>

// Command-line entry point; subcommands are registered in cli.cpp.
int main(int argc, char** argv) {
    (void)argc;
    (void)argv;
    std::puts("mvcl: command-line interface not wired up yet");
    return 1;
}
