#include "embshap/cli.hpp"

int main(int argc, char** argv) { return embshap::cli::run(argc, argv); }
