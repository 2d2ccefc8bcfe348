# テストパッケージ
# pytestの設定と共通のテストユーティリティをここに配置できます