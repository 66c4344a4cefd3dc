#include "commands.hpp"

int main(int argc, char** argv) { return gptd::cli::run(argc, argv); }
