#include "deepsteg/cli.hpp"

int main(int argc, char** argv) { return deepsteg::cli::run(argc, argv); }
