#include "sta_probe/cli.hpp"

int main(int argc, char** argv) { return sta::cli::run(argc, argv); }
