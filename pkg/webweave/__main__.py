import webweave

if __name__ == "__main__":
    webweave.main()
