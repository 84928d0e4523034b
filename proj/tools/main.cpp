#include "ebr/cli.hpp"

int main(int argc, char** argv) { return ebr::cli::run(argc, argv); }
