import json

import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_encoder(tmp_path_factory):
    """A locally constructed miniature BERT (random but fixed weights) so
    the exporter runs without downloading anything."""
    from transformers import BertConfig, BertModel, BertTokenizer

    root = tmp_path_factory.mktemp("encoder")
    words = [f"w{i:03d}" for i in range(40)]
    vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"] + words
    vocab_file = root / "vocab.txt"
    vocab_file.write_text("\n".join(vocab) + "\n", encoding="utf-8")

    torch.manual_seed(1234)
    config = BertConfig(
        vocab_size=len(vocab), hidden_size=16, num_hidden_layers=1,
        num_attention_heads=2, intermediate_size=32,
        max_position_embeddings=64)
    model = BertModel(config)
    model.save_pretrained(root)
    tokenizer = BertTokenizer(vocab_file=str(vocab_file))
    tokenizer.save_pretrained(root)
    return root


@pytest.fixture()
def tiny_corpus(tmp_path):
    """Five documents plus two articles in the native JSONL formats."""
    docs = [
        {"doc_id": "case0", "date": "2010-01-01",
         "sentences": [["w001", "w002", "w003"], ["w004", "w005"]],
         "alleged": ["2"], "violated": []},
        {"doc_id": "case1", "date": "2010-01-02",
         "sentences": [["w006"]], "alleged": [], "violated": []},
        {"doc_id": "case2", "date": "2010-01-03",
         "sentences": [["w007", "w008"]] * 60,  # over the sentence limit
         "alleged": ["3"], "violated": ["3"]},
        {"doc_id": "case3", "date": "2010-01-04",
         "sentences": [["w009"] * 300],  # over the token limit
         "alleged": [], "violated": []},
        {"doc_id": "case4", "date": "2010-01-05",
         "sentences": [["w010", "w011"], ["w012"], ["w013", "w014"]],
         "alleged": ["2", "3"], "violated": ["2"]},
    ]
    articles = [
        {"id": "2", "sentences": [["w020", "w021"], ["w022"]]},
        {"id": "3", "sentences": [["w023", "w024", "w025"]]},
    ]
    corpus_path = tmp_path / "corpus.jsonl"
    article_path = tmp_path / "articles.jsonl"
    corpus_path.write_text(
        "\n".join(json.dumps(d) for d in docs) + "\n", encoding="utf-8")
    article_path.write_text(
        "\n".join(json.dumps(a) for a in articles) + "\n", encoding="utf-8")
    return corpus_path, article_path
