#include "dattr/cli.hpp"

int main(int argc, char** argv) { return dattr::cli::run(argc, argv); }
